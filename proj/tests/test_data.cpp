#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "gprcov/data/dataset.hpp"
#include "gprcov/gpr/dataset.hpp"

using namespace gprcov;
using namespace gprcov::data;
namespace fs = std::filesystem;

namespace {

// The default 1584-sample set, generated once per test binary.
class DefaultSet : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "gprcov_test_data_default";
    fs::remove_all(dir_);
    gpr::generate_dataset(gpr::DatasetSpec{}, 2024, dir_.string());
    samples_ = new std::vector<Sample>(load_dataset(dir_.string()));
  }
  static void TearDownTestSuite() {
    delete samples_;
    samples_ = nullptr;
    fs::remove_all(dir_);
  }
  static const std::vector<Sample>& samples() { return *samples_; }

  static inline fs::path dir_;
  static inline std::vector<Sample>* samples_ = nullptr;
};

// Metadata-only stand-ins with tiny images, for the combinatorial checks.
std::vector<Sample> synthetic(std::size_t per_class, std::size_t classes = 4) {
  std::vector<Sample> out;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Sample s;
      s.image = Tensor<float>({2, 2}, static_cast<float>(out.size()));
      s.label = static_cast<int>(c);
      s.meta.elevation_cm = 25 * static_cast<int>(1 + i % 4);
      s.meta.frequency_mhz = i % 2 ? 350 : 200;
      s.meta.soil = static_cast<gpr::Soil>(i % 4);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path small_set(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("gprcov_test_data_" + name);
  fs::remove_all(dir);
  gpr::DatasetSpec spec;
  spec.count_per_cell = 1;
  spec.elevations_cm = {50};
  gpr::generate_dataset(spec, 9, dir.string());
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loading

TEST_F(DefaultSet, ClassHistogramIs396Each) {
  ASSERT_EQ(samples().size(), 1584u);
  EXPECT_EQ(class_histogram(samples(), all_indices(1584)), (std::vector<std::size_t>{396, 396, 396, 396}));
}

TEST_F(DefaultSet, RoundTripIsBitwiseAndInManifestOrder) {
  const auto scenes = gpr::dataset_scenes(gpr::DatasetSpec{}, 2024);
  for (std::size_t i = 0; i < samples().size(); i += 97) {
    const auto regenerated = gpr::generate_sample(gpr::DatasetSpec{}, scenes[i]);
    EXPECT_EQ(samples()[i].image, regenerated.image) << i;
    EXPECT_EQ(samples()[i].label, regenerated.label);
    EXPECT_EQ(samples()[i].meta.file, gpr::sample_file_name(i));
    EXPECT_EQ(samples()[i].meta.soil, scenes[i].soil);
    EXPECT_EQ(samples()[i].meta.elevation_cm, scenes[i].elevation_cm);
  }
}

TEST(LoadDataset, CorruptMagicNamesTheFile) {
  const auto dir = small_set("magic");
  const auto victim = dir / gpr::sample_file_name(2);
  auto bytes = slurp(victim);
  bytes[1] = 'X';
  spit(victim, bytes);
  try {
    load_dataset(dir.string());
    FAIL() << "expected BadMagicError";
  } catch (const BadMagicError& e) {
    EXPECT_NE(std::string(e.what()).find(gpr::sample_file_name(2)), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(LoadDataset, TruncatedFile) {
  const auto dir = small_set("trunc");
  const auto victim = dir / gpr::sample_file_name(0);
  auto bytes = slurp(victim);
  bytes.resize(bytes.size() - 7);
  spit(victim, bytes);
  EXPECT_THROW(load_dataset(dir.string()), TruncatedFileError);
  bytes.resize(6);  // inside the header
  spit(victim, bytes);
  EXPECT_THROW(load_dataset(dir.string()), TruncatedFileError);
  fs::remove_all(dir);
}

TEST(LoadDataset, LabelOutOfRange) {
  const auto dir = small_set("label");
  auto manifest = read_manifest(dir.string());
  manifest["samples"][3]["label"] = 7;
  const std::string text = manifest.dump();
  spit(dir / "manifest.json", std::vector<char>(text.begin(), text.end()));
  EXPECT_THROW(load_dataset(dir.string()), LabelRangeError);
  // The three errors are distinct types.
  EXPECT_FALSE((std::is_base_of_v<BadMagicError, LabelRangeError>));
  EXPECT_FALSE((std::is_base_of_v<TruncatedFileError, BadMagicError>));
  fs::remove_all(dir);
}

TEST(LoadDataset, MissingOrMalformedManifest) {
  const auto dir = fs::temp_directory_path() / "gprcov_test_data_missing";
  fs::remove_all(dir);
  EXPECT_THROW(load_dataset(dir.string()), IoError);
  fs::create_directories(dir);
  spit(dir / "manifest.json", {'{', 'x'});
  EXPECT_THROW(load_dataset(dir.string()), FormatError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Splits

TEST_F(DefaultSet, DefaultSplitSizes) {
  const auto s = split(samples(), SplitSpec{0.7, 0.5, 3});
  EXPECT_EQ(s.train.size(), 1108u);
  EXPECT_EQ(s.val.size(), 238u);
  EXPECT_EQ(s.test.size(), 238u);
}

TEST(Split, StratifiedDisjointExhaustiveOver100Seeds) {
  const auto samples = synthetic(396);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = split(samples, SplitSpec{0.7, 0.5, seed});
    ASSERT_EQ(s.train.size() + s.val.size() + s.test.size(), samples.size());
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    ASSERT_EQ(all.size(), samples.size());
    for (const Indices* part : {&s.train, &s.val, &s.test}) {
      const auto h = class_histogram(samples, *part);
      const double expected = static_cast<double>(part->size()) / 4.0;
      for (std::size_t c : h) ASSERT_LE(std::abs(static_cast<double>(c) - expected), 1.0) << "seed " << seed;
    }
  }
}

TEST(Split, UnbalancedClassesStayWithinOne) {
  std::vector<Sample> samples = synthetic(50);
  auto extra = synthetic(37, 2);
  samples.insert(samples.end(), extra.begin(), extra.end());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split(samples, SplitSpec{0.6, 0.5, seed});
    const auto total = class_histogram(samples, all_indices(samples.size()));
    for (const Indices* part : {&s.train, &s.val, &s.test}) {
      const auto h = class_histogram(samples, *part);
      for (std::size_t c = 0; c < 4; ++c) {
        const double expected = static_cast<double>(total[c]) * static_cast<double>(part->size()) /
                                static_cast<double>(samples.size());
        EXPECT_LE(std::abs(static_cast<double>(h[c]) - expected), 1.0);
      }
    }
  }
}

TEST(Split, SameSeedSamePartitionDifferentSeedDiffers) {
  const auto samples = synthetic(40);
  const auto a = split(samples, SplitSpec{0.7, 0.5, 1}), b = split(samples, SplitSpec{0.7, 0.5, 1});
  const auto c = split(samples, SplitSpec{0.7, 0.5, 2});
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, Errors) {
  const auto samples = synthetic(2);
  EXPECT_THROW(split(samples, SplitSpec{0.0, 0.5, 0}), ConfigError);
  EXPECT_THROW(split(samples, SplitSpec{1.0, 0.5, 0}), ConfigError);
  EXPECT_THROW(split(samples, SplitSpec{0.9, 0.5, 0}), ConfigError);  // empty validation split
}

TEST(Split, AuditListsSizesAndHistograms) {
  const auto samples = synthetic(10);
  const SplitSpec spec{0.5, 0.5, 4};
  const auto s = split(samples, spec);
  const auto j = split_audit(samples, spec, s);
  EXPECT_EQ(j.at("train").at("size"), 20);
  EXPECT_EQ(j.at("val").at("class_histogram").size(), 4u);
  EXPECT_EQ(j.at("seed"), 4);
}

// ---------------------------------------------------------------------------
// Label noise

TEST(LabelNoise, ZeroFractionIsIdentity) {
  const auto samples = synthetic(25);
  const auto n = inject_label_noise(samples, 0.0, 1);
  EXPECT_TRUE(n.flips.empty());
  EXPECT_EQ(labels_of(n.samples), labels_of(samples));
}

TEST(LabelNoise, TwentyPercentOfHundred) {
  const auto samples = synthetic(25);
  const auto n = inject_label_noise(samples, 0.2, 5);
  ASSERT_EQ(n.flips.size(), 20u);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    changed += n.samples[i].label != samples[i].label;
    EXPECT_EQ(n.samples[i].image, samples[i].image);  // pixels untouched
  }
  EXPECT_EQ(changed, 20u);
  for (const auto& f : n.flips) {
    EXPECT_NE(f.from, f.to);
    EXPECT_EQ(samples[f.position].label, f.from);
    EXPECT_EQ(n.samples[f.position].label, f.to);
    EXPECT_GE(f.to, 0);
    EXPECT_LT(f.to, 4);
  }
  const auto audit = noise_audit(0.2, 5, n);
  EXPECT_EQ(audit.at("flips").size(), 20u);
}

TEST(LabelNoise, SeedBehaviour) {
  const auto samples = synthetic(25);
  const auto a = inject_label_noise(samples, 0.2, 5), b = inject_label_noise(samples, 0.2, 5);
  const auto c = inject_label_noise(samples, 0.2, 6);
  EXPECT_EQ(labels_of(a.samples), labels_of(b.samples));
  EXPECT_NE(labels_of(a.samples), labels_of(c.samples));
}

TEST(LabelNoise, TargetsAreSpreadOverOtherClasses) {
  const auto samples = synthetic(500);
  const auto n = inject_label_noise(samples, 0.5, 8);
  std::array<std::array<int, 4>, 4> counts{};
  for (const auto& f : n.flips) ++counts[static_cast<std::size_t>(f.from)][static_cast<std::size_t>(f.to)];
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_EQ(counts[a][a], 0);
    for (std::size_t b = 0; b < 4; ++b) {
      if (a != b) EXPECT_GT(counts[a][b], 50);
    }
  }
}

TEST(LabelNoise, FractionOutOfRange) {
  EXPECT_THROW(inject_label_noise(synthetic(2), 0.6, 1), ConfigError);
  EXPECT_THROW(inject_label_noise(synthetic(2), -0.1, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Scenarios

TEST_F(DefaultSet, ScenarioAExcludesElevation25AndKeeps50ForTest) {
  const auto s = apply_scenario(samples(), ShiftScenario{ScenarioId::A});
  for (std::size_t i : s.trainval) EXPECT_TRUE(samples()[i].meta.elevation_cm >= 75);
  for (std::size_t i : s.test) EXPECT_EQ(samples()[i].meta.elevation_cm, 50);
  for (std::size_t i : s.excluded) EXPECT_EQ(samples()[i].meta.elevation_cm, 25);
  EXPECT_EQ(s.trainval.size() + s.test.size() + s.excluded.size(), samples().size());
  EXPECT_EQ(s.excluded.size(), 396u);
}

TEST_F(DefaultSet, EverySampleOnExactlyOneSide) {
  for (ScenarioId id : {ScenarioId::A, ScenarioId::B, ScenarioId::C, ScenarioId::D}) {
    for (bool swap : {false, true}) {
      const auto s = apply_scenario(samples(), ShiftScenario{id, swap});
      std::vector<int> seen(samples().size(), 0);
      for (const Indices* part : {&s.trainval, &s.test, &s.excluded})
        for (std::size_t i : *part) ++seen[i];
      for (int v : seen) ASSERT_EQ(v, 1);
    }
  }
}

TEST_F(DefaultSet, ScenarioAxesAreDisjoint) {
  const auto b = apply_scenario(samples(), ShiftScenario{ScenarioId::B});
  for (std::size_t i : b.trainval) EXPECT_EQ(samples()[i].meta.frequency_mhz, 200);
  for (std::size_t i : b.test) EXPECT_EQ(samples()[i].meta.frequency_mhz, 350);
  EXPECT_TRUE(b.excluded.empty());
  const auto bs = apply_scenario(samples(), ShiftScenario{ScenarioId::B, true});
  EXPECT_EQ(bs.trainval, b.test);

  const auto c = apply_scenario(samples(), ShiftScenario{ScenarioId::C});
  std::set<gpr::Soil> train_soils, test_soils;
  for (std::size_t i : c.trainval) train_soils.insert(samples()[i].meta.soil);
  for (std::size_t i : c.test) test_soils.insert(samples()[i].meta.soil);
  EXPECT_EQ(train_soils, std::set<gpr::Soil>{gpr::Soil::dry_gravel});
  EXPECT_EQ(test_soils, std::set<gpr::Soil>{gpr::Soil::gravel});

  const auto d = apply_scenario(samples(), ShiftScenario{ScenarioId::D});
  for (std::size_t i : d.trainval) EXPECT_EQ(samples()[i].meta.soil, gpr::Soil::wet_sand);
  for (std::size_t i : d.test) EXPECT_EQ(samples()[i].meta.soil, gpr::Soil::sand);
}

TEST(Scenario, EmptyFilterIsAnError) {
  auto samples = synthetic(4);
  for (auto& s : samples) s.meta.frequency_mhz = 200;
  EXPECT_THROW(apply_scenario(samples, ShiftScenario{ScenarioId::B}), ConfigError);
  EXPECT_THROW(apply_scenario(samples, ShiftScenario{ScenarioId::B, true}), ConfigError);
  EXPECT_THROW(parse_scenario("E"), ConfigError);
}

TEST(Batch, StacksImages) {
  const auto samples = synthetic(3);
  const auto b = make_batch<double>(samples, {4, 1});
  EXPECT_EQ(b.shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(b(0, 0, 1, 1), 4.0);
  EXPECT_EQ(b(1, 0, 0, 0), 1.0);
  EXPECT_THROW(make_batch<double>(samples, {}), DimensionError);
}
