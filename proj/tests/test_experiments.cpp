#include <gtest/gtest.h>

#include <set>

#include "iqe/experiments.hpp"
#include "iqe/synth.hpp"
#include "test_util.hpp"

using namespace iqe;
using iqe::testing::TempDir;
using iqe::testing::write_bytes;

namespace fixture {

/// Copies the first feature column as its prediction.
struct EchoModel {
  int marker = 0;
};

inline Eigen::VectorXd predict_rows(const EchoModel&, const Eigen::MatrixXd& raw) { return raw.col(0); }

struct EchoTrainer {
  EchoModel operator()(const Eigen::MatrixXd&, const Eigen::VectorXd&) const { return {1}; }
};

}  // namespace fixture

namespace {

const char* kTypes[] = {"jpeg", "jp2k", "gblur", "awgn", "fastfading"};

/// refs x types x levels rows with a noisy-linear relation between the two
/// leading features and MOS; features beyond those are noise.
struct Dataset {
  DatasetManifest manifest;
  Eigen::MatrixXd features;
};

Dataset make_dataset(std::size_t refs, std::size_t levels, Eigen::Index dims, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Dataset d;
  for (std::size_t r = 0; r < refs; ++r)
    for (const char* t : kTypes)
      for (std::size_t l = 0; l < levels; ++l) {
        ManifestRow row;
        row.ref_id = "r" + std::to_string(r);
        row.distortion_type = t;
        row.level = std::to_string(l);
        row.image_id = row.ref_id + "_" + t + "_" + row.level;
        row.image_path = row.image_id + ".png";
        row.mos = 100.0 - 20.0 * static_cast<double>(l) + 5.0 * uniform01(rng);
        d.manifest.rows.push_back(row);
      }
  d.features.resize(static_cast<Eigen::Index>(d.manifest.size()), dims);
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
    const double mos = d.manifest.rows[static_cast<std::size_t>(i)].mos;
    for (Eigen::Index f = 0; f < dims; ++f) d.features(i, f) = uniform01(rng);
    d.features(i, 0) = mos / 100.0 + 0.05 * uniform01(rng);
    d.features(i, 1) = -mos / 50.0 + 0.1 * uniform01(rng);
  }
  return d;
}

std::string manifest_text(const std::string& rows) { return std::string(kManifestHeader) + "\n" + rows; }

}  // namespace

TEST(Manifest, LoadsAndResolvesRelativePaths) {
  TempDir dir;
  write_bytes(dir.file("a.pgm"), "P5\n1 1\n255\n\x10");
  write_bytes(dir.file("m.csv"), manifest_text("i1,a.pgm,r1,jpeg,1,55.5\ni2,a.pgm,r2,awgn,2,30\n"));
  const auto m = load_manifest(dir.file("m.csv"));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.rows[0].image_path, dir.file("a.pgm"));
  EXPECT_EQ(m.rows[1].mos, 30.0);
  EXPECT_EQ(m.ref_ids(), (std::vector<std::string>{"r1", "r2"}));
  EXPECT_EQ(m.distortion_types(), (std::vector<std::string>{"awgn", "jpeg"}));
}

TEST(Manifest, ColumnOrderIsFree) {
  TempDir dir;
  write_bytes(dir.file("m.csv"), "mos,level,distortion_type,ref_id,image_path,image_id\n12,1,jpeg,r1,x.png,i1\n");
  const auto m = load_manifest(dir.file("m.csv"), false);
  EXPECT_EQ(m.rows[0].image_id, "i1");
  EXPECT_EQ(m.rows[0].mos, 12.0);
}

TEST(Manifest, Errors) {
  TempDir dir;
  write_bytes(dir.file("dup.csv"), manifest_text("i1,x.png,r1,jpeg,1,5\ni1,y.png,r2,jpeg,1,6\n"));
  EXPECT_THROW(load_manifest(dir.file("dup.csv"), false), ConfigError);
  write_bytes(dir.file("col.csv"), "image_id,image_path,ref_id,level,mos\ni1,x.png,r1,1,5\n");
  EXPECT_THROW(load_manifest(dir.file("col.csv"), false), ConfigError);
  write_bytes(dir.file("file.csv"), manifest_text("i1,nope.png,r1,jpeg,1,5\n"));
  EXPECT_THROW(load_manifest(dir.file("file.csv")), ConfigError);
  write_bytes(dir.file("mos.csv"), manifest_text("i1,x.png,r1,jpeg,1,abc\n"));
  EXPECT_THROW(load_manifest(dir.file("mos.csv"), false), ConfigError);
}

TEST(Splits, ReferenceCounts) {
  EXPECT_EQ(train_ref_count(29, 0.8), 23u);
  EXPECT_EQ(train_ref_count(2, 0.8), 1u);
  EXPECT_EQ(train_ref_count(10, 0.5), 5u);
  const auto d = make_dataset(29, 1, 2, 1);
  const auto splits = make_splits(d.manifest, 0.8, 10, 7);
  ASSERT_EQ(splits.size(), 10u);
  for (const auto& s : splits) {
    EXPECT_EQ(s.train_ref_ids.size(), 23u);
    EXPECT_EQ(s.test_ref_ids.size(), 6u);
    std::set<std::string> all(s.train_ref_ids.begin(), s.train_ref_ids.end());
    all.insert(s.test_ref_ids.begin(), s.test_ref_ids.end());
    EXPECT_EQ(all.size(), 29u);
  }
  EXPECT_NE(splits[0].train_ref_ids, splits[1].train_ref_ids);
}

TEST(Splits, DeterministicPerSeed) {
  const auto d = make_dataset(12, 1, 2, 1);
  const auto a = make_splits(d.manifest, 0.8, 3, 99), b = make_splits(d.manifest, 0.8, 3, 99);
  const auto c = make_splits(d.manifest, 0.8, 3, 100);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].train_ref_ids, b[i].train_ref_ids);
  EXPECT_NE(a[0].train_ref_ids, c[0].train_ref_ids);
}

TEST(Splits, Errors) {
  const auto d = make_dataset(5, 1, 2, 1);
  EXPECT_THROW(make_splits(d.manifest, 0.0, 1, 0), ConfigError);
  EXPECT_THROW(make_splits(d.manifest, 1.0, 1, 0), ConfigError);
  EXPECT_THROW(make_splits(d.manifest, 0.8, 0, 0), ConfigError);
  EXPECT_THROW(make_splits(make_dataset(1, 1, 2, 1).manifest, 0.8, 1, 0), ConfigError);
}

TEST(Protocol, PerfectPredictorScoresOne) {
  auto d = make_dataset(10, 3, 2, 2);
  std::vector<std::size_t> all(d.manifest.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  d.features.col(0) = d.manifest.mos(all);
  const auto splits = make_splits(d.manifest, 0.8, 4, 3);
  const auto res = run_protocol(d.manifest, d.features, splits, fixture::EchoTrainer{});
  ASSERT_EQ(res.splits.size(), 4u);
  EXPECT_EQ(res.splits[0].model.marker, 1);
  for (const auto& m : res.means()) {
    EXPECT_NEAR(m.pcc, 1.0, 1e-12) << m.subset;
    EXPECT_NEAR(m.srocc, 1.0, 1e-12) << m.subset;
  }
  EXPECT_EQ(res.mean("shared").splits, 4u);
  EXPECT_THROW(res.mean("contrast"), Error);
}

TEST(Protocol, TestRowsNeverShareReferencesWithTraining) {
  const auto d = make_dataset(10, 3, 4, 4);
  const auto res = run_protocol(d.manifest, d.features, make_splits(d.manifest, 0.7, 5, 5), SvrTrainer{});
  for (const auto& s : res.splits) {
    const std::set<std::string> train(s.train_ref_ids.begin(), s.train_ref_ids.end());
    for (auto r : s.test_rows) EXPECT_EQ(train.count(d.manifest.rows[r].ref_id), 0u);
    EXPECT_EQ(s.test_rows.size(), 3u * 15u);
  }
  std::vector<std::size_t> train = {0}, test = {1};
  EXPECT_THROW(check_no_leakage(d.manifest, train, test), Error);
}

TEST(Protocol, SerialAndParallelAgree) {
  const auto d = make_dataset(8, 3, 5, 6);
  const auto splits = make_splits(d.manifest, 0.75, 4, 1);
  const auto a = run_protocol(d.manifest, d.features, splits, SvrTrainer{}, 1);
  const auto b = run_protocol(d.manifest, d.features, splits, SvrTrainer{}, 3);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(a.splits[s].test_predictions, b.splits[s].test_predictions);
}

TEST(Protocol, SubsetsAndWarnings) {
  const auto d = make_dataset(6, 2, 3, 7);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.manifest.size(); ++i)
    if (d.manifest.rows[i].ref_id == "r0") rows.push_back(i);
  const Eigen::VectorXd pred = d.manifest.mos(rows);
  const auto ev = evaluate_subsets(d.manifest, rows, pred);
  // 10 rows: full and shared (8 rows) evaluate; each type has only 2 rows.
  ASSERT_EQ(ev.reports.size(), 2u);
  EXPECT_EQ(ev.reports[0].subset, "full");
  EXPECT_EQ(ev.reports[1].subset, "shared");
  EXPECT_EQ(ev.reports[1].n, 8u);
  EXPECT_EQ(ev.warnings.size(), 5u);
}

TEST(Protocol, FeatureRowMismatch) {
  const auto d = make_dataset(4, 1, 2, 8);
  EXPECT_THROW(run_protocol(d.manifest, d.features.topRows(3), make_splits(d.manifest, 0.5, 1, 0), SvrTrainer{}),
               DimensionError);
}

TEST(FeatureSweep, AllFeaturesReproduceFullModel) {
  const auto d = make_dataset(10, 3, 8, 9);
  const auto splits = make_splits(d.manifest, 0.8, 3, 2);
  const SvrParams params;
  const auto full = run_protocol(d.manifest, d.features, splits, SvrTrainer{params});
  const auto sweep = topk_sweep(d.manifest, d.features, full, {1, 4, 8}, params);
  ASSERT_EQ(sweep.size(), 3u);
  EXPECT_EQ(sweep[2].mean_pcc, full.mean("full").pcc);
  EXPECT_EQ(sweep[2].mean_srocc, full.mean("full").srocc);
  EXPECT_EQ(sweep[0].m, 1u);
  EXPECT_EQ(sweep[0].pcc.size(), 3u);

  const auto bottom_all = bottomk_eval(d.manifest, d.features, full, 8, params);
  EXPECT_EQ(bottom_all.sweep.mean_pcc, full.mean("full").pcc);
  EXPECT_EQ(bottom_all.deviation, 0.0);
  const auto bottom = bottomk_eval(d.manifest, d.features, full, 7, params, 0.99);
  EXPECT_EQ(bottom.peak_pcc, 0.99);
  EXPECT_DOUBLE_EQ(bottom.deviation, 0.99 - bottom.sweep.mean_pcc);

  EXPECT_THROW(topk_sweep(d.manifest, d.features, full, {0}, params), ConfigError);
  EXPECT_THROW(topk_sweep(d.manifest, d.features, full, {9}, params), ConfigError);
}

TEST(FeatureSweep, SubsetSelection) {
  const std::vector<std::size_t> ranking = {4, 0, 3, 1, 2};
  EXPECT_EQ(top_features(ranking, 2), (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(bottom_features(ranking, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(CrossDb, IdentityMapReproducesHeldOutResults) {
  const auto d = make_dataset(8, 3, 4, 10);
  const auto full = run_protocol(d.manifest, d.features, make_splits(d.manifest, 0.75, 3, 4), SvrTrainer{});
  ContentMap identity;
  for (const auto& r : d.manifest.ref_ids()) identity.emplace(r, r);
  const auto cross = cross_db_eval(full, d.manifest, d.features, &identity);
  const auto a = full.means(), b = cross.means();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].subset, b[i].subset);
    EXPECT_EQ(a[i].pcc, b[i].pcc);
    EXPECT_EQ(a[i].srocc, b[i].srocc);
  }
  // Without exclusion every target row is scored.
  const auto unfiltered = cross_db_eval(full, d.manifest, d.features, nullptr);
  EXPECT_EQ(unfiltered.per_model[0].reports[0].n, d.manifest.size());
}

TEST(CrossDb, ContentMapFile) {
  TempDir dir;
  write_bytes(dir.file("map.csv"), "target_ref_id,source_ref_id\nt1,s1\nt1,s2\n");
  const auto map = load_content_map(dir.file("map.csv"));
  EXPECT_EQ(map.count("t1"), 2u);
  write_bytes(dir.file("bad.csv"), "a,b\nt1,s1\n");
  EXPECT_THROW(load_content_map(dir.file("bad.csv")), ConfigError);

  DatasetManifest target;
  for (const char* ref : {"t1", "t2"}) {
    ManifestRow r;
    r.ref_id = ref;
    target.rows.push_back(r);
  }
  EXPECT_EQ(unseen_rows(target, {"s2"}, &map), (std::vector<std::size_t>{1}));
  EXPECT_EQ(unseen_rows(target, {"s3"}, &map), (std::vector<std::size_t>{0, 1}));
}

TEST(Synth, DatasetLayout) {
  TempDir dir;
  SynthOptions opts;
  opts.image_size = 32;
  opts.seed = 5;
  const auto m = synth_dataset(dir.file("a"), opts);
  EXPECT_EQ(m.size(), 24u * 4u * 4u);
  EXPECT_EQ(m.ref_ids().size(), 24u);
  for (const auto& r : m.rows) {
    if (r.level == "0") {
      EXPECT_EQ(r.mos, 100.0);
    } else {
      EXPECT_LT(r.mos, 100.0);
    }
  }
  const auto img = load_grayscale(m.rows[5].image_path);
  EXPECT_EQ(img.width, 32u);

  const auto again = synth_dataset(dir.file("b"), opts);
  for (std::size_t i = 0; i < m.size(); i += 37) {
    EXPECT_EQ(iqe::testing::read_bytes(m.rows[i].image_path), iqe::testing::read_bytes(again.rows[i].image_path));
  }
  EXPECT_EQ(iqe::testing::read_bytes(dir.file("a/manifest.csv")), iqe::testing::read_bytes(dir.file("b/manifest.csv")));
  opts.image_size = 30;
  EXPECT_THROW(synth_dataset(dir.file("c"), opts), ConfigError);
}
