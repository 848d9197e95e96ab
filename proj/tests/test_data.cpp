#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "shapsens/data.hpp"
#include "shapsens/error.hpp"

using namespace shapsens;

namespace {

Schema small_schema() {
  return Schema({{"age", FeatureKind::kContinuous, {}}, {"race", FeatureKind::kCategorical, {"White", "Black"}}},
                "label", "age");
}

}  // namespace

TEST(Schema, RejectsInvalidDescriptors) {
  EXPECT_THROW(Schema({{"a", FeatureKind::kContinuous, {}}, {"a", FeatureKind::kContinuous, {}}}, "y", "a"),
               SchemaError);
  EXPECT_THROW(Schema({{"a", FeatureKind::kContinuous, {}}}, "y", "b"), SchemaError);
  EXPECT_THROW(Schema({{"c", FeatureKind::kCategorical, {"only"}}}, "y", "c"), SchemaError);
}

TEST(Schema, JsonRoundTrip) {
  const auto s = synth_schema();
  EXPECT_EQ(Schema::from_json(s.to_json()), s);
  EXPECT_EQ(s.to_json().at("protected"), "age");
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(s.with_protected("race").protected_feature(), "race");
  EXPECT_THROW(s.with_protected("zip"), SchemaError);
}

TEST(Csv, ParsesRowsInOrder) {
  const auto d = parse_csv("age,race,label\n30,White,1\n41,Black,0\n55.5,White,1\n", small_schema());
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.value(2, 0), 55.5);
  EXPECT_EQ(d.token(1, 1), "Black");
  EXPECT_EQ(d.targets(), (std::vector<int>{1, 0, 1}));
}

TEST(Csv, HeaderOnlyGivesEmptyDataset) {
  EXPECT_EQ(parse_csv("age,race,label\n", small_schema()).size(), 0u);
}

TEST(Csv, ExtraColumnsAndOrderAreIgnored) {
  const auto d = parse_csv("label,zip,race,age\n1,x,Black,20\n", small_schema());
  EXPECT_EQ(d.row(0), (std::vector<double>{20, 1}));
}

TEST(Csv, UnknownCategoryIsDomainErrorNamingRowAndValue) {
  try {
    parse_csv("age,race,label\n30,White,1\n31,Martian,0\n", small_schema());
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("Martian"), std::string::npos) << msg;
    EXPECT_EQ(e.kind(), "domain");
  }
}

TEST(Csv, ErrorKinds) {
  EXPECT_THROW(parse_csv("age,label\n1,0\n", small_schema()), SchemaError);
  EXPECT_THROW(parse_csv("age,race,label\n1x,White,0\n", small_schema()), ParseError);
  EXPECT_THROW(parse_csv("age,race,label\n,White,0\n", small_schema()), ParseError);
  EXPECT_THROW(parse_csv("age,race,label\n1,White,2\n", small_schema()), ParseError);
  EXPECT_THROW(parse_csv("age,race,label\n1,White\n", small_schema()), ParseError);
  EXPECT_THROW(load_csv("/nonexistent/file.csv", small_schema()), IoError);
}

TEST(Csv, RoundTripThroughFile) {
  const auto d = synth_generate({50}, 5);
  const auto path = std::filesystem::temp_directory_path() / "shapsens_roundtrip.csv";
  d.write_csv(path);
  EXPECT_EQ(load_csv(path, d.schema()), d);
  std::filesystem::remove(path);
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_generate({}, 42);
  EXPECT_EQ(a.size(), 2000u);
  EXPECT_EQ(a.to_csv(), synth_generate({}, 42).to_csv());
  EXPECT_NE(a.rows(), synth_generate({}, 43).rows());
  EXPECT_THROW(synth_generate({0}, 1), ArgumentError);
}

TEST(Synth, FixtureAndRanges) {
  const auto d = synth_generate({}, 42);
  int positives = 0;
  for (int t : d.targets()) positives += t;
  // Regression fixture from the first correct build.
  EXPECT_EQ(positives, 1247);
  EXPECT_EQ(d.row(0)[0], 75.0);
  EXPECT_EQ(d.token(0, 1), "Black");
  std::vector<int> race(4, 0);
  for (std::size_t r = 0; r < d.size(); ++r) {
    EXPECT_GE(d.value(r, 0), 17);
    EXPECT_LE(d.value(r, 0), 94);
    EXPECT_GE(d.value(r, 2), 1);
    EXPECT_LE(d.value(r, 2), 16);
    EXPECT_GE(d.value(r, 3), 5);
    EXPECT_LE(d.value(r, 3), 60);
    ++race[static_cast<std::size_t>(d.value(r, 1))];
  }
  const double rate = positives / 2000.0;
  EXPECT_GE(rate, 0.2);
  EXPECT_LE(rate, 0.8);
  EXPECT_NEAR(race[0] / 2000.0, 0.6, 0.04);
  EXPECT_NEAR(race[1] / 2000.0, 0.2, 0.03);
}

TEST(Kfold, SizesFollowRemainderRule) {
  auto sizes = [](std::size_t n) {
    std::vector<std::size_t> s;
    for (const auto& f : split_kfold(n, 5, 1)) s.push_back(f.test.size());
    return s;
  };
  EXPECT_EQ(sizes(10), (std::vector<std::size_t>{2, 2, 2, 2, 2}));
  EXPECT_EQ(sizes(11), (std::vector<std::size_t>{3, 2, 2, 2, 2}));
}

TEST(Kfold, PartitionProperties) {
  const auto folds = split_kfold(103, 7, 9);
  std::multiset<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_TRUE(std::is_sorted(f.train.begin(), f.train.end()));
    EXPECT_EQ(f.train.size() + f.test.size(), 103u);
    std::set<std::size_t> all(f.train.begin(), f.train.end());
    for (std::size_t i : f.test) {
      EXPECT_FALSE(all.count(i));
      seen.insert(i);
    }
  }
  EXPECT_EQ(seen.size(), 103u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 103u);
  EXPECT_EQ(split_kfold(103, 7, 9)[3].test, folds[3].test);
  EXPECT_THROW(split_kfold(10, 1, 0), ArgumentError);
  EXPECT_THROW(split_kfold(3, 4, 0), ArgumentError);
}

TEST(Confusion, Cells) {
  auto p = confusion_partition({1, 1, 0, 0}, {1, 0, 1, 0});
  EXPECT_EQ(p.true_positive, std::vector<std::size_t>{0});
  EXPECT_EQ(p.false_positive, std::vector<std::size_t>{1});
  EXPECT_EQ(p.false_negative, std::vector<std::size_t>{2});
  EXPECT_EQ(p.true_negative, std::vector<std::size_t>{3});
  p = confusion_partition({1, 0}, {1, 1});
  EXPECT_EQ(p.true_positive, std::vector<std::size_t>{0});
  EXPECT_EQ(p.false_negative, std::vector<std::size_t>{1});
  EXPECT_EQ(confusion_partition({1, 1, 1}, {1, 1, 1}).true_positive.size(), 3u);
  EXPECT_THROW(confusion_partition({1}, {1, 0}), ArgumentError);
}

TEST(Dataset, InvariantsAreChecked) {
  EXPECT_THROW(Dataset(small_schema(), {{1.0}}, {0}), ArgumentError);
  EXPECT_THROW(Dataset(small_schema(), {{1.0, 2.0}}, {0}), DomainError);
  EXPECT_THROW(Dataset(small_schema(), {{1.0, 0.0}}, {3}), DomainError);
  EXPECT_THROW(Dataset(small_schema(), {{1.0, 0.0}}, {}), ArgumentError);
}
