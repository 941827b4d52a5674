#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "essa/data.hpp"
#include "essa/errors.hpp"
#include "essa/eval.hpp"

using namespace essa;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("essa_data_test_" + name);
}

}  // namespace

TEST(Generate, ByteIdenticalReruns) {
  SynthSpec spec;
  spec.train_count = 32;
  Dataset a = generate(spec, Split::train, Domain::target);
  Dataset b = generate(spec, Split::train, Domain::target);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Generate, ZeroShiftTargetEqualsSource) {
  SynthSpec spec;
  spec.train_count = 16;
  spec.shift_strength = 0.0;
  Dataset source = generate(spec, Split::train, Domain::source);
  Dataset target = generate(spec, Split::train, Domain::target);
  EXPECT_EQ(source.pixels, target.pixels);
  EXPECT_EQ(source.labels, target.labels);
}

TEST(Generate, NonzeroShiftChangesPixels) {
  SynthSpec spec;
  spec.train_count = 16;
  spec.shift_strength = 1.0;
  Dataset source = generate(spec, Split::train, Domain::source);
  Dataset target = generate(spec, Split::train, Domain::target);
  EXPECT_NE(source.pixels, target.pixels);
  EXPECT_EQ(source.labels, target.labels);  // same scenes, same classes
}

TEST(Generate, BalancedLabels) {
  SynthSpec spec;
  spec.train_count = 40;
  Dataset d = generate(spec, Split::train, Domain::source);
  std::vector<int> counts(spec.num_classes, 0);
  for (auto l : d.labels) counts[l]++;
  for (int c : counts) EXPECT_EQ(c, 10);
}

TEST(Generate, RawPixelKnnBeatsChance) {
  // Classes must be separable enough that a 1-NN on raw pixels scores at
  // least 1.5x chance on the default 4-class spec.
  SynthSpec spec;
  spec.train_count = 128;
  spec.test_count = 64;
  Dataset train = generate(spec, Split::train, Domain::source);
  Dataset test = generate(spec, Split::test, Domain::source);

  const std::size_t dim = train.image_bytes();
  std::vector<double> gallery;
  gallery.reserve(train.count() * dim);
  for (std::size_t i = 0; i < train.count(); ++i) {
    auto img = train.image(i);
    gallery.insert(gallery.end(), img.data().begin(), img.data().end());
  }
  EmbeddingIndex index = build_index(gallery, dim, train.labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.count(); ++i) {
    auto img = test.image(i);
    std::vector<double> q(img.data().begin(), img.data().end());
    if (knn_predict(index, q, 1, 0.07).label == test.label(i)) ++hits;
  }
  const double acc = static_cast<double>(hits) / test.count();
  EXPECT_GE(acc, 1.5 * 0.25) << "raw-pixel 1-NN accuracy " << acc;
}

TEST(Generate, MonotoneShiftDifficulty) {
  // k-NN accuracy of a source-gallery pixel embedder on target data is
  // non-increasing in shift strength (median over 3 seeds).
  std::vector<std::vector<double>> accs(3);
  const double strengths[3] = {0.0, 0.5, 1.0};
  for (int seed = 0; seed < 3; ++seed) {
    for (double s : strengths) {
      SynthSpec spec;
      spec.seed = 90 + seed;
      spec.train_count = 96;
      spec.test_count = 64;
      spec.shift_strength = s;
      Dataset train = generate(spec, Split::train, Domain::source);
      Dataset test = generate(spec, Split::test, Domain::target);
      const std::size_t dim = train.image_bytes();
      std::vector<double> gallery;
      for (std::size_t i = 0; i < train.count(); ++i) {
        auto img = train.image(i);
        gallery.insert(gallery.end(), img.data().begin(), img.data().end());
      }
      EmbeddingIndex index = build_index(gallery, dim, train.labels);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < test.count(); ++i) {
        auto img = test.image(i);
        std::vector<double> q(img.data().begin(), img.data().end());
        if (knn_predict(index, q, 1, 0.07).label == test.label(i)) ++hits;
      }
      accs[seed].push_back(static_cast<double>(hits) / test.count());
    }
  }
  auto median = [&](int column) {
    std::vector<double> v = {accs[0][column], accs[1][column],
                             accs[2][column]};
    std::sort(v.begin(), v.end());
    return v[1];
  };
  EXPECT_GE(median(0), median(1) - 1e-9);
  EXPECT_GE(median(1), median(2) - 1e-9);
}

TEST(DatasetFile, RoundTripByteIdentity) {
  SynthSpec spec;
  spec.train_count = 24;
  Dataset d = generate(spec, Split::train, Domain::target);
  const fs::path path = temp_file("roundtrip.esds");
  save_dataset(d, path);

  std::ifstream f1(path, std::ios::binary);
  std::vector<char> bytes1((std::istreambuf_iterator<char>(f1)),
                           std::istreambuf_iterator<char>());
  Dataset loaded = load_dataset(path);
  const fs::path path2 = temp_file("roundtrip2.esds");
  save_dataset(loaded, path2);
  std::ifstream f2(path2, std::ios::binary);
  std::vector<char> bytes2((std::istreambuf_iterator<char>(f2)),
                           std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes1, bytes2);

  // Pixel mapping is value/255.
  EXPECT_DOUBLE_EQ(loaded.image(0).data()[0],
                   static_cast<double>(loaded.pixels[0]) / 255.0);
  fs::remove(path);
  fs::remove(path2);
}

TEST(DatasetFile, LengthFormulaMatchesHeader) {
  SynthSpec spec;
  spec.train_count = 10;
  Dataset d = generate(spec, Split::train, Domain::source);
  const fs::path path = temp_file("length.esds");
  save_dataset(d, path);
  const std::size_t expected =
      16 + d.count() * (d.image_bytes() + 2);  // labeled: +2 per record
  EXPECT_EQ(fs::file_size(path), expected);

  Dataset unlabeled = without_labels(d);
  save_dataset(unlabeled, path);
  EXPECT_EQ(fs::file_size(path), 16 + d.count() * d.image_bytes());
  fs::remove(path);
}

TEST(DatasetFile, TruncatedFileCitesByteCounts) {
  SynthSpec spec;
  spec.train_count = 8;
  Dataset d = generate(spec, Split::train, Domain::source);
  const fs::path path = temp_file("truncated.esds");
  save_dataset(d, path);
  fs::resize_file(path, fs::file_size(path) - 5);
  try {
    load_dataset(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("expected"), std::string::npos) << what;
  }
  fs::remove(path);
}

TEST(DatasetFile, BadMagicRejected) {
  const fs::path path = temp_file("badmagic.esds");
  std::ofstream f(path, std::ios::binary);
  f << "NOPE" << std::string(20, '\0');
  f.close();
  try {
    load_dataset(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  fs::remove(path);
}

TEST(DatasetFile, UnlabeledLoadReportsLabelsRequired) {
  SynthSpec spec;
  spec.train_count = 6;
  Dataset labeled = generate(spec, Split::train, Domain::source);
  const fs::path path = temp_file("unlabeled.esds");
  save_dataset(without_labels(labeled), path);
  Dataset loaded = load_dataset(path);
  EXPECT_FALSE(loaded.labeled);
  try {
    (void)loaded.label(0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("labels required"),
              std::string::npos);
  }
  fs::remove(path);
}

TEST(DatasetFile, FilenameConvention) {
  EXPECT_EQ(dataset_filename("synth", Split::val, Domain::target),
            "synth.val.target.esds");
}
