/*
 * Copyright 2026 The mkdsc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <gtest/gtest.h>

#include "mkdsc/kernels.hpp"
#include "mkdsc/mtsdata.hpp"

#include <fstream>

namespace fs = std::filesystem;
using namespace mkdsc;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mkdsc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

}  // namespace

TEST(Mtsdata, LoadsManifestOfThreeFiles) {
  const auto dir = fresh_dir("load3");
  write_file(dir / "a.csv", "x,y\n1,2\n3,4\n5,6\n");
  write_file(dir / "b.csv", "1.5,2.5\n3.5,4.5\n");
  write_file(dir / "c.csv", "0,0\n");
  write_file(dir / "m.jsonl",
             "{\"id\":\"a\",\"path\":\"a.csv\",\"label\":0}\n{\"id\":\"b\",\"path\":\"b.csv\",\"label\":1}\n"
             "{\"id\":\"c\",\"path\":\"c.csv\",\"label\":1}\n");
  const Dataset ds = load_dataset(dir / "m.jsonl", Role::seen);
  ASSERT_EQ(ds.size(), 3);
  EXPECT_EQ(ds.dims(), 2);
  EXPECT_EQ(ds[0].values.cols(), 3);
  EXPECT_DOUBLE_EQ(ds[0].values(1, 2), 6.0);
  EXPECT_DOUBLE_EQ(ds[1].values(0, 1), 3.5);
  EXPECT_EQ(ds.labelSet, (std::set<int>{0, 1}));
}

TEST(Mtsdata, NanCellNamesFileAndPosition) {
  const auto dir = fresh_dir("nan");
  write_file(dir / "a.csv", "1,2\n3,nan\n");
  write_file(dir / "m.jsonl", "{\"id\":\"a\",\"path\":\"a.csv\",\"label\":0}\n");
  try {
    load_dataset(dir / "m.jsonl", Role::seen);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("a.csv"), std::string::npos) << msg;
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  }
}

TEST(Mtsdata, MixedDimensionCountIsRejected) {
  const auto dir = fresh_dir("ragged");
  write_file(dir / "a.csv", "1,2\n3,4\n");
  write_file(dir / "b.csv", "1,2,3\n");
  write_file(dir / "m.jsonl", "{\"id\":\"a\",\"path\":\"a.csv\",\"label\":0}\n{\"id\":\"b\",\"path\":\"b.csv\",\"label\":0}\n");
  try {
    load_dataset(dir / "m.jsonl", Role::seen);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos) << e.what();
  }
}

TEST(Mtsdata, RaggedRowAndMissingFileAndEmptyManifest) {
  const auto dir = fresh_dir("errors");
  write_file(dir / "a.csv", "1,2\n3\n");
  write_file(dir / "m.jsonl", "{\"id\":\"a\",\"path\":\"a.csv\",\"label\":0}\n");
  EXPECT_THROW(load_dataset(dir / "m.jsonl", Role::seen), DataError);
  write_file(dir / "m2.jsonl", "{\"id\":\"z\",\"path\":\"nope.csv\",\"label\":0}\n");
  EXPECT_THROW(load_dataset(dir / "m2.jsonl", Role::seen), DataError);
  write_file(dir / "m3.jsonl", "\n");
  EXPECT_THROW(load_dataset(dir / "m3.jsonl", Role::seen), DataError);
  EXPECT_THROW(load_dataset(dir / "absent.jsonl", Role::seen), DataError);
}

TEST(Mtsdata, SeenSequencesNeedLabels) {
  const auto dir = fresh_dir("nolabel");
  write_file(dir / "a.csv", "1,2\n");
  write_file(dir / "m.jsonl", "{\"id\":\"a\",\"path\":\"a.csv\"}\n");
  EXPECT_THROW(load_dataset(dir / "m.jsonl", Role::seen), DataError);
  EXPECT_NO_THROW(load_dataset(dir / "m.jsonl", Role::unseen));
}

TEST(Mtsdata, StringLabelsAreInternedInFirstSeenOrder) {
  const auto dir = fresh_dir("strings");
  write_file(dir / "a.csv", "1\n");
  write_file(dir / "m.jsonl",
             "{\"id\":\"a\",\"path\":\"a.csv\",\"label\":\"walk\"}\n{\"id\":\"b\",\"path\":\"a.csv\",\"label\":\"run\"}\n"
             "{\"id\":\"c\",\"path\":\"a.csv\",\"label\":\"walk\"}\n");
  LabelMap map;
  const Dataset ds = load_dataset(dir / "m.jsonl", Role::seen, &map);
  EXPECT_EQ(*ds[0].label, 0);
  EXPECT_EQ(*ds[1].label, 1);
  EXPECT_EQ(*ds[2].label, 0);
  EXPECT_EQ(map.names, (std::vector<std::string>{"walk", "run"}));
}

TEST(Mtsdata, SaveLoadRoundTripIsExact) {
  SynthConfig cfg;
  cfg.samplesPerClass = 3;
  const auto s = synth_dataset(cfg);
  const auto dir = fresh_dir("roundtrip");
  const auto manifest = save_dataset(s.seen, dir, "seen");
  const Dataset back = load_dataset(manifest, Role::seen);
  ASSERT_EQ(back.size(), s.seen.size());
  for (Index i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, s.seen[i].id);
    EXPECT_EQ(back[i].label, s.seen[i].label);
    ASSERT_EQ(back[i].values.rows(), s.seen[i].values.rows());
    ASSERT_EQ(back[i].values.cols(), s.seen[i].values.cols());
    EXPECT_TRUE((back[i].values.array() == s.seen[i].values.array()).all());
  }
  EXPECT_EQ(dataset_hash(back), dataset_hash(s.seen));
}

TEST(Mtsdata, SynthIsDeterministic) {
  SynthConfig cfg;
  cfg.seed = 7;
  const auto a = synth_dataset(cfg);
  const auto b = synth_dataset(cfg);
  EXPECT_EQ(dataset_hash(a.seen), dataset_hash(b.seen));
  EXPECT_EQ(dataset_hash(a.unseen), dataset_hash(b.unseen));
  cfg.seed = 8;
  EXPECT_NE(dataset_hash(synth_dataset(cfg).seen), dataset_hash(a.seen));
}

TEST(Mtsdata, ZeroNoiseCompositeCopiesSourceTemplates) {
  SynthConfig cfg;
  cfg.noiseStd = 0.0;
  cfg.numSeenClasses = 2;
  cfg.numUnseenClasses = 1;
  cfg.dims = 2;
  cfg.samplesPerClass = 4;
  const auto s = synth_dataset(cfg);
  ASSERT_EQ(s.provenance.size(), 1u);
  EXPECT_EQ(s.provenance[0].dimSource, (std::vector<int>{0, 1}));
  for (const auto& z : s.unseen.sequences) {
    const Index len = z.values.cols();
    const Vector d0 = z.values.row(0).transpose();
    const Vector d1 = z.values.row(1).transpose();
    EXPECT_TRUE((d0.array() == s.templates[0][0].sample(len).array()).all());
    EXPECT_TRUE((d1.array() == s.templates[1][1].sample(len).array()).all());
  }
}

TEST(Mtsdata, NoisyCompositeDimensionsAreNearestToTheirSource) {
  SynthConfig cfg;
  cfg.noiseStd = 0.05;
  cfg.samplesPerClass = 6;
  const auto s = synth_dataset(cfg);
  for (const auto& z : s.unseen.sequences) {
    const auto& prov = s.provenance_of(*z.label);
    for (Index l = 0; l < z.dims(); ++l) {
      double ownMax = 0.0, other = std::numeric_limits<double>::infinity();
      for (const auto& y : s.seen.sequences) {
        const double d = dtw(z.dim(l), y.dim(l));
        if (*y.label == prov.dimSource[static_cast<std::size_t>(l)])
          ownMax = std::max(ownMax, d);
        else
          other = std::min(other, d);
      }
      EXPECT_LT(ownMax, other) << z.id << " dim " << l;
    }
  }
}

TEST(Mtsdata, SynthRejectsTooManyUnseenClasses) {
  SynthConfig cfg;
  cfg.numSeenClasses = 2;
  cfg.numUnseenClasses = 3;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
  cfg.numUnseenClasses = 1;
  cfg.noiseStd = -1.0;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
}

TEST(Mtsdata, UnseenLabelsMustBeDisjointFromSeen) {
  SynthConfig cfg;
  cfg.samplesPerClass = 2;
  auto s = synth_dataset(cfg);
  EXPECT_NO_THROW(check_disjoint_labels(s.seen, s.unseen));
  s.unseen.sequences[0].label = 0;
  s.unseen.validate();
  EXPECT_THROW(check_disjoint_labels(s.seen, s.unseen), DataError);
}
