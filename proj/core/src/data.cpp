#include "essa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "essa/errors.hpp"
#include "essa/rng.hpp"

namespace essa {

std::string split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

std::string domain_name(Domain d) {
  return d == Domain::source ? "source" : "target";
}

std::size_t SynthSpec::count_for(Split s) const {
  switch (s) {
    case Split::train:
      return train_count;
    case Split::val:
      return val_count;
    case Split::test:
      return test_count;
  }
  return 0;
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw ConfigError("SynthSpec: need >= 2 classes");
  if (image_size == 0) throw ConfigError("SynthSpec: image_size must be > 0");
  if (channels == 0 || channels > 3)
    throw ConfigError("SynthSpec: channels must be 1..3");
  if (!(shift_strength >= 0.0 && shift_strength <= 1.0))
    throw ConfigError("SynthSpec: shift_strength must be in [0, 1]");
}

std::size_t Dataset::count() const {
  return image_bytes() == 0 ? 0 : pixels.size() / image_bytes();
}

Tensor Dataset::image(std::size_t i) const {
  if (i >= count()) {
    throw ContractError("Dataset: index " + std::to_string(i) +
                        " out of range " + std::to_string(count()));
  }
  const std::size_t n = image_bytes();
  std::vector<double> values(n);
  const std::uint8_t* base = pixels.data() + i * n;
  for (std::size_t j = 0; j < n; ++j)
    values[j] = static_cast<double>(base[j]) / 255.0;
  return Tensor::from_data({channels, height, width}, std::move(values));
}

std::uint16_t Dataset::label(std::size_t i) const {
  if (!labeled) throw DataError("Dataset: labels required but not present");
  return labels.at(i);
}

std::size_t Dataset::num_classes() const {
  if (!labeled) throw DataError("Dataset: labels required but not present");
  std::uint16_t mx = 0;
  for (std::uint16_t l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx) + 1;
}

namespace {

void gaussian_blur(std::vector<double>& plane, std::size_t size,
                   double sigma) {
  if (sigma < 1e-6) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int s = static_cast<int>(size);
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, s - 1);
        acc += kernel[i + radius] * plane[y * s + xx];
      }
      tmp[y * s + x] = acc;
    }
  }
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, s - 1);
        acc += kernel[i + radius] * tmp[yy * s + x];
      }
      plane[y * s + x] = acc;
    }
  }
}

constexpr double kChannelGain[3] = {1.0, 0.9, 0.8};

}  // namespace

Dataset generate(const SynthSpec& spec, Split split, Domain domain) {
  spec.validate();
  const std::size_t s = spec.image_size, c = spec.channels;
  const std::size_t count = spec.count_for(split);
  const double strength =
      domain == Domain::source ? 0.0 : spec.shift_strength;

  Dataset out;
  out.channels = c;
  out.height = s;
  out.width = s;
  out.labeled = true;
  out.pixels.resize(count * c * s * s);
  out.labels.resize(count);

  for (std::size_t idx = 0; idx < count; ++idx) {
    const std::uint16_t label =
        static_cast<std::uint16_t>(idx % spec.num_classes);
    out.labels[idx] = label;

    // The scene stream depends on (seed, split, index) only, never on the
    // domain, so shift_strength=0 reproduces the source bytes exactly.
    RngStream scene(derive_seed(spec.seed, split_name(split), idx));
    const double theta = std::numbers::pi *
                         static_cast<double>(label) /
                         static_cast<double>(spec.num_classes);
    const double freq =
        (spec.base_frequency + spec.frequency_step * label) *
        (1.0 + spec.frequency_jitter * scene.uniform(-1.0, 1.0));
    const double phase = spec.phase_jitter * scene.uniform(-1.0, 1.0);
    const double amplitude = 0.32 + 0.06 * scene.uniform(-1.0, 1.0);
    const double offset = 0.5 + 0.04 * scene.uniform(-1.0, 1.0);
    const double ct = std::cos(theta), st = std::sin(theta);

    std::vector<double> image(c * s * s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const double u = (static_cast<double>(x) + 0.5) /
                           static_cast<double>(s);
          const double v = (static_cast<double>(y) + 0.5) /
                           static_cast<double>(s);
          const double wave =
              std::sin(2.0 * std::numbers::pi * freq * (u * ct + v * st) +
                       phase);
          image[(ch * s + y) * s + x] =
              std::clamp((offset + amplitude * wave) * kChannelGain[ch], 0.0,
                         1.0);
        }
      }
    }
    for (double& v : image)
      v = std::clamp(v + scene.normal(0.0, spec.texture_noise), 0.0, 1.0);

    if (strength > 0.0) {
      const double g = 1.0 + strength * (spec.gamma - 1.0);
      for (double& v : image) v = std::pow(std::max(v, 0.0), g);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double bias = strength * spec.channel_bias[ch];
        for (std::size_t j = 0; j < s * s; ++j) image[ch * s * s + j] += bias;
      }
      if (spec.blur_radius > 0.0) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::vector<double> plane(image.begin() + ch * s * s,
                                    image.begin() + (ch + 1) * s * s);
          gaussian_blur(plane, s, strength * spec.blur_radius);
          std::copy(plane.begin(), plane.end(), image.begin() + ch * s * s);
        }
      }
      for (double& v : image) v += scene.normal(0.0, strength * spec.noise_sigma);
    }

    std::uint8_t* dst = out.pixels.data() + idx * c * s * s;
    for (std::size_t j = 0; j < c * s * s; ++j) {
      dst[j] = static_cast<std::uint8_t>(
          std::lround(std::clamp(image[j], 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

Dataset without_labels(const Dataset& dataset) {
  Dataset out = dataset;
  out.labeled = false;
  out.labels.clear();
  return out;
}

std::string dataset_filename(const std::string& name, Split split,
                             Domain domain) {
  return name + "." + split_name(split) + "." + domain_name(domain) + ".esds";
}

namespace {

constexpr char kMagic[4] = {'E', 'S', 'D', 'S'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 1 + 2 + 2 + 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  const std::size_t record =
      dataset.image_bytes() + (dataset.labeled ? 2 : 0);
  bytes.reserve(kHeaderBytes + dataset.count() * record);
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u16(bytes, kDatasetFormatVersion);
  put_u32(bytes, static_cast<std::uint32_t>(dataset.count()));
  bytes.push_back(static_cast<std::uint8_t>(dataset.channels));
  put_u16(bytes, static_cast<std::uint16_t>(dataset.height));
  put_u16(bytes, static_cast<std::uint16_t>(dataset.width));
  bytes.push_back(dataset.labeled ? 1 : 0);
  for (std::size_t i = 0; i < dataset.count(); ++i) {
    const std::uint8_t* img = dataset.pixels.data() + i * dataset.image_bytes();
    bytes.insert(bytes.end(), img, img + dataset.image_bytes());
    if (dataset.labeled) put_u16(bytes, dataset.labels[i]);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw DataError("save_dataset: cannot open '" + path.string() +
                    "' for writing");
  }
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw DataError("save_dataset: write failed for '" +
                             path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DataError("load_dataset: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes) {
    throw DataError("load_dataset: '" + path.string() + "' truncated header: " +
                    std::to_string(bytes.size()) + " bytes, expected >= " +
                    std::to_string(kHeaderBytes));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("load_dataset: bad magic at offset 0 in '" +
                    path.string() + "' (expected \"ESDS\")");
  }
  const std::uint16_t version = get_u16(bytes.data() + 4);
  if (version != kDatasetFormatVersion) {
    throw DataError("load_dataset: unsupported version " +
                    std::to_string(version) + " at offset 4 in '" +
                    path.string() + "'");
  }
  Dataset out;
  const std::uint32_t count = get_u32(bytes.data() + 6);
  out.channels = bytes[10];
  out.height = get_u16(bytes.data() + 11);
  out.width = get_u16(bytes.data() + 13);
  out.labeled = bytes[15] != 0;
  const std::size_t record = out.image_bytes() + (out.labeled ? 2 : 0);
  const std::size_t expected = kHeaderBytes + count * record;
  if (bytes.size() != expected) {
    throw DataError("load_dataset: '" + path.string() + "' length " +
                    std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected) + " (count field at offset 6)");
  }
  out.pixels.resize(count * out.image_bytes());
  if (out.labeled) out.labels.resize(count);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::memcpy(out.pixels.data() + i * out.image_bytes(), p,
                out.image_bytes());
    p += out.image_bytes();
    if (out.labeled) {
      out.labels[i] = get_u16(p);
      p += 2;
    }
  }
  return out;
}

}  // namespace essa
