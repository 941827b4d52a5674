#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "essa/tensor.hpp"

namespace essa {

enum class Split { train, val, test };
enum class Domain { source, target };

std::string split_name(Split s);
std::string domain_name(Domain d);

/// Two-domain synthetic classification generator. Each class is a 2-D
/// sinusoid with its own frequency and orientation; instances jitter the
/// phase/frequency/amplitude. The target domain applies an intensity gamma,
/// per-channel bias, blur, and pixel noise, interpolated by shift_strength
/// (0 reproduces the source domain byte-for-byte).
struct SynthSpec {
  std::string name = "synth";
  std::size_t num_classes = 4;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t train_count = 512;
  std::size_t val_count = 128;
  std::size_t test_count = 256;

  // class signal
  double base_frequency = 1.5;
  double frequency_step = 1.0;
  double phase_jitter = 0.5;
  double frequency_jitter = 0.05;
  double texture_noise = 0.02;

  // domain transform at full strength
  double gamma = 1.8;
  std::array<double, 3> channel_bias = {0.12, -0.04, -0.10};
  double noise_sigma = 0.06;
  double blur_radius = 1.0;

  double shift_strength = 1.0;
  std::uint64_t seed = 0;

  std::size_t count_for(Split s) const;
  void validate() const;
};

/// In-memory dataset: 8-bit pixels (the canonical storage), optional u16
/// labels. Pixels map to [0,1] doubles via value/255 at access time.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool labeled = false;
  std::vector<std::uint8_t> pixels;  // count * channels*height*width
  std::vector<std::uint16_t> labels;

  std::size_t count() const;
  std::size_t image_bytes() const { return channels * height * width; }
  /// Image i as a [C,H,W] tensor of [0,1] doubles.
  Tensor image(std::size_t i) const;
  std::uint16_t label(std::size_t i) const;
  /// max label + 1; requires labels.
  std::size_t num_classes() const;
};

/// Deterministic per (spec.seed, split, index); the underlying scene does
/// not depend on the domain, only the transform does. Generated files carry
/// labels; self-supervised stages ignore them.
Dataset generate(const SynthSpec& spec, Split split, Domain domain);

/// Copy with the label channel removed (label_present = 0 on disk).
Dataset without_labels(const Dataset& dataset);

/// "<name>.<split>.<domain>.esds"
std::string dataset_filename(const std::string& name, Split split,
                             Domain domain);

/// ESDS binary format: header {magic "ESDS", version u16, count u32,
/// channels u8, height u16, width u16, label_present u8}, little-endian,
/// then count records of raw pixels (+ u16 label when labeled).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

}  // namespace essa
