#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "bronchograde/csv.hpp"
#include "bronchograde/data_model.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"
#include "unit/test_support.hpp"

using namespace bronchograde;

namespace {

ImageRecord record(const std::string& patient, int grade, std::uint8_t fill = 0) {
  ImageRecord r;
  r.patient_id = patient;
  r.grade = GradeLabel(grade);
  r.pixels = Image(4, 4, fill);
  return r;
}

/// n patients per grade, `per_patient` images each; every image distinct by fill value.
Dataset patients_dataset(int patients_per_grade, int per_patient) {
  std::vector<ImageRecord> recs;
  int k = 0;
  for (int g = 1; g <= 6; ++g)
    for (int p = 0; p < patients_per_grade; ++p)
      for (int i = 0; i < per_patient; ++i)
        recs.push_back(record("p" + std::to_string(g) + "_" + std::to_string(p), g, static_cast<std::uint8_t>(k++)));
  return Dataset(std::move(recs));
}

std::multiset<std::string> ids(const Dataset& ds) {
  std::multiset<std::string> out;
  for (const auto& r : ds) out.insert(r.patient_id + "#" + std::to_string(r.pixels.at(0, 0, 0)));
  return out;
}

}  // namespace

TEST(GradeFromVentilation, ReferenceBands) {
  EXPECT_EQ(grade_from_ventilation(12).value(), 1);
  EXPECT_EQ(grade_from_ventilation(36).value(), 2);
  EXPECT_EQ(grade_from_ventilation(45 * 24).value(), 6);
  EXPECT_EQ(grade_from_ventilation(14 * 24).value(), 4);
}

TEST(GradeFromVentilation, BandEdges) {
  EXPECT_EQ(grade_from_ventilation(23.999).value(), 1);
  EXPECT_EQ(grade_from_ventilation(24).value(), 2);
  EXPECT_EQ(grade_from_ventilation(48).value(), 2);
  EXPECT_EQ(grade_from_ventilation(48.001).value(), 3);
  EXPECT_EQ(grade_from_ventilation(7 * 24).value(), 3);
  EXPECT_EQ(grade_from_ventilation(7 * 24 + 0.5).value(), 4);
  EXPECT_EQ(grade_from_ventilation(14 * 24 + 0.5).value(), 5);
  EXPECT_EQ(grade_from_ventilation(30 * 24).value(), 5);
  EXPECT_EQ(grade_from_ventilation(30 * 24 + 0.5).value(), 6);
}

TEST(GradeFromVentilation, RejectsNonPositiveAndNonFinite) {
  EXPECT_THROW(grade_from_ventilation(0), ValidationError);
  EXPECT_THROW(grade_from_ventilation(-3), ValidationError);
  EXPECT_THROW(grade_from_ventilation(std::numeric_limits<double>::quiet_NaN()), ValidationError);
  EXPECT_THROW(grade_from_ventilation(std::numeric_limits<double>::infinity()), ValidationError);
}

TEST(GradeFromVentilation, MonotoneAndSurjective) {
  std::set<int> seen;
  int prev = 1;
  for (double h = 0.25; h < 2000; h += 0.25) {
    const int g = grade_from_ventilation(h).value();
    ASSERT_GE(g, prev) << "at " << h << " h";
    prev = g;
    seen.insert(g);
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(GradeLabel, RejectsOutOfRange) {
  EXPECT_THROW(GradeLabel(0), ValidationError);
  EXPECT_THROW(GradeLabel(7), ValidationError);
  EXPECT_EQ(GradeLabel::from_index(5).value(), 6);
}

TEST(Dataset, CountsPerGrade) {
  const auto ds = patients_dataset(2, 3);
  EXPECT_EQ(ds.size(), 36u);
  for (auto g : all_grades()) EXPECT_EQ(ds.count(g), 6u);
  EXPECT_EQ(ds.filter(GradeLabel(3)).size(), 6u);
}

class ManifestTest : public ::testing::Test {
 protected:
  bg_test::TempDir dir;
  void write_image(const std::string& rel) { write_png(dir.path() / rel, Image(8, 8, 50)); }
  std::filesystem::path write_manifest(const std::vector<csv::Row>& rows) {
    csv::write_file(dir.path() / "manifest.csv", rows);
    return dir.path() / "manifest.csv";
  }
};

TEST_F(ManifestTest, LoadsEveryRowOfALargeManifest) {
  // 236 images over 22 patients.
  std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours"}};
  write_image("img.png");
  for (int i = 0; i < 236; ++i) {
    const int patient = i % 22;
    rows.push_back({"pt" + std::to_string(patient), "img.png", std::to_string(10.0 + patient * 40.0)});
  }
  const auto ds = load_manifest(write_manifest(rows), LoadOptions{16});
  ASSERT_EQ(ds.size(), 236u);
  EXPECT_EQ(ds[0].pixels.height(), 16);
  std::set<std::string> patients;
  for (const auto& r : ds) patients.insert(r.patient_id);
  EXPECT_EQ(patients.size(), 22u);
}

TEST_F(ManifestTest, EmptyManifestWarns) {
  std::ofstream(dir.path() / "empty.csv").close();
  log::Capture cap;
  EXPECT_TRUE(load_manifest(dir.path() / "empty.csv").empty());
  EXPECT_EQ(cap.warnings(), 1);
}

TEST_F(ManifestTest, HeaderOnlyManifestWarns) {
  log::Capture cap;
  EXPECT_TRUE(load_manifest(write_manifest({{"patient_id", "image_path", "ventilation_hours"}})).empty());
  EXPECT_EQ(cap.warnings(), 1);
}

TEST_F(ManifestTest, MissingImageNamesTheRow) {
  write_image("ok.png");
  const auto path = write_manifest(
      {{"patient_id", "image_path", "ventilation_hours"}, {"a", "ok.png", "10"}, {"b", "gone.png", "10"}});
  try {
    load_manifest(path);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST_F(ManifestTest, GradeColumnWinsAndSplitHintsAreRead) {
  write_image("a.png");
  const auto ds = load_manifest(write_manifest({{"patient_id", "image_path", "ventilation_hours", "grade", "split"},
                                                {"a", "a.png", "10", "5", "test"},
                                                {"b", "a.png", "1000", "", "train"}}));
  EXPECT_EQ(ds[0].grade.value(), 5);
  EXPECT_EQ(ds[1].grade.value(), 6);
  EXPECT_EQ(*ds[0].split_hint, SplitTag::test);
  EXPECT_EQ(*ds[1].split_hint, SplitTag::train);
}

TEST_F(ManifestTest, RejectsMissingColumnsAndBadValues) {
  write_image("a.png");
  EXPECT_THROW(load_manifest(write_manifest({{"patient", "image_path"}, {"a", "a.png"}})), LoadError);
  EXPECT_THROW(load_manifest(write_manifest({{"patient_id", "image_path", "grade"}, {"a", "a.png", "9"}})), LoadError);
  EXPECT_THROW(load_manifest(write_manifest({{"patient_id", "image_path", "ventilation_hours"}, {"a", "a.png", "x"}})),
               LoadError);
  EXPECT_THROW(load_manifest(write_manifest({{"patient_id", "image_path"}, {"a", "a.png"}})), LoadError);
}

TEST_F(ManifestTest, DirectoryFallbackUsesGradeFolders) {
  write_png(dir.path() / "grade_2" / "b.png", Image(4, 4, 1));
  write_png(dir.path() / "grade_2" / "a.png", Image(4, 4, 2));
  write_png(dir.path() / "grade_6" / "c.png", Image(4, 4, 3));
  const auto ds = load_directory(dir.path(), LoadOptions{4});
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds[0].patient_id, "a");
  EXPECT_EQ(ds[0].grade.value(), 2);
  EXPECT_EQ(ds[2].grade.value(), 6);
}

TEST_F(ManifestTest, SaveThenLoadPreservesRecords) {
  const auto ds = patients_dataset(1, 2);
  save_dataset(ds, dir.path() / "out" / "m.csv", dir.path() / "out" / "img");
  const auto back = load_manifest(dir.path() / "out" / "m.csv", LoadOptions{4});
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].patient_id, ds[i].patient_id);
    EXPECT_EQ(back[i].grade, ds[i].grade);
  }
}

TEST(Split, ImageLevelCountsFollowTheRatio) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(record("p" + std::to_string(i), 1, static_cast<std::uint8_t>(i)));
  const auto res = split_dataset(Dataset(recs), SplitOptions{0.7, 4, false});
  EXPECT_EQ(res.train.size(), 7u);
  EXPECT_EQ(res.test.size(), 3u);
}

TEST(Split, SameSeedSameMembership) {
  const auto ds = patients_dataset(4, 3);
  for (bool by_patient : {true, false}) {
    const auto a = split_dataset(ds, SplitOptions{0.7, 9, by_patient});
    const auto b = split_dataset(ds, SplitOptions{0.7, 9, by_patient});
    EXPECT_EQ(a.train_indices, b.train_indices);
    EXPECT_EQ(a.test_indices, b.test_indices);
  }
}

TEST(Split, PartitionsTheDataset) {
  const auto ds = patients_dataset(4, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (bool by_patient : {true, false}) {
      const auto res = split_dataset(ds, SplitOptions{0.7, seed, by_patient});
      std::vector<std::size_t> all = res.train_indices;
      all.insert(all.end(), res.test_indices.begin(), res.test_indices.end());
      std::sort(all.begin(), all.end());
      ASSERT_EQ(all.size(), ds.size());
      for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
      EXPECT_EQ(res.train.size(), res.train_indices.size());
    }
  }
}

TEST(Split, PatientsNeverStraddleTheSplit) {
  // 22 patients with uneven image counts.
  std::vector<ImageRecord> recs;
  int k = 0;
  for (int p = 0; p < 22; ++p)
    for (int i = 0; i < 1 + p % 4; ++i) recs.push_back(record("pt" + std::to_string(p), 1 + p % 6, static_cast<std::uint8_t>(k++)));
  const Dataset ds(recs);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto res = split_dataset(ds, SplitOptions{0.7, seed, true});
    std::set<std::string> train_patients;
    for (const auto& r : res.train) train_patients.insert(r.patient_id);
    for (const auto& r : res.test) ASSERT_FALSE(train_patients.count(r.patient_id)) << r.patient_id;
    EXPECT_FALSE(res.train.empty());
    EXPECT_FALSE(res.test.empty());
  }
}

TEST(Split, WarnsForAbsentGrades) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < 6; ++i) recs.push_back(record("p" + std::to_string(i), 1 + i % 2, static_cast<std::uint8_t>(i)));
  log::Capture cap;
  split_dataset(Dataset(recs), SplitOptions{0.5, 0, false});
  EXPECT_EQ(cap.warnings(), 4);
}

TEST(Split, RejectsBadRatioAndEmptyData) {
  const auto ds = patients_dataset(1, 1);
  EXPECT_THROW(split_dataset(ds, SplitOptions{1.0, 0, true}), ValidationError);
  EXPECT_THROW(split_dataset(ds, SplitOptions{0.0, 0, true}), ValidationError);
  EXPECT_THROW(split_dataset(Dataset(), SplitOptions{}), ValidationError);
}

TEST(Split, HintsAreHonoured) {
  auto a = record("a", 1);
  a.split_hint = SplitTag::test;
  auto b = record("b", 2);
  b.split_hint = SplitTag::train;
  const auto res = split_from_hints(Dataset({a, b}));
  ASSERT_EQ(res.test.size(), 1u);
  EXPECT_EQ(res.test[0].patient_id, "a");
  EXPECT_THROW(split_from_hints(Dataset({record("c", 1)})), PreconditionError);
}

TEST(OneVsAll, TargetGradeFormsDomainB) {
  const auto train = patients_dataset(2, 2);
  const auto part = one_vs_all_partition(train, GradeLabel(1));
  EXPECT_EQ(part.trainB.size(), 4u);
  for (const auto& r : part.trainB) EXPECT_EQ(r.grade.value(), 1);
  for (const auto& r : part.trainA) EXPECT_NE(r.grade.value(), 1);
  EXPECT_EQ(part.trainA.size() + part.trainB.size(), train.size());
}

TEST(OneVsAll, EachImageInOneDomainBAndFiveDomainA) {
  const auto train = patients_dataset(2, 2);
  std::map<std::string, int> in_b, in_a;
  for (int g = 1; g <= 6; ++g) {
    const auto part = one_vs_all_partition(train, g);
    for (const auto& key : ids(part.trainB)) ++in_b[key];
    for (const auto& key : ids(part.trainA)) ++in_a[key];
  }
  for (const auto& key : ids(train)) {
    EXPECT_EQ(in_b[key], 1) << key;
    EXPECT_EQ(in_a[key], 5) << key;
  }
}

TEST(OneVsAll, RejectsBadGradeAndEmptyInputs) {
  const auto train = patients_dataset(1, 1);
  EXPECT_THROW(one_vs_all_partition(train, 7), ValidationError);
  EXPECT_THROW(one_vs_all_partition(Dataset(), GradeLabel(1)), PreconditionError);
  EXPECT_THROW(one_vs_all_partition(train.filter(GradeLabel(2)), GradeLabel(1)), PreconditionError);
}
