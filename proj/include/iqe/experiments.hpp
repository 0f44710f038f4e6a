#pragma once

// Dataset manifests, reference-wise splits and the evaluation protocols built
// on top of them (repeated train/test evaluation, cross-database evaluation,
// top-m / bottom-m feature sweeps).

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iqe/codebook.hpp"
#include "iqe/csv.hpp"
#include "iqe/encoder.hpp"
#include "iqe/error.hpp"
#include "iqe/metrics.hpp"
#include "iqe/parallel.hpp"
#include "iqe/regression.hpp"
#include "iqe/rng.hpp"

namespace iqe {

// ---------------------------------------------------------------------------
// Manifests

struct ManifestRow {
  std::string image_id;
  std::string image_path;  // resolved (absolute or relative to the working dir)
  std::string ref_id;
  std::string distortion_type;
  std::string level;
  double mos = 0.0;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  std::size_t size() const { return rows.size(); }

  std::vector<std::string> ref_ids() const {
    std::set<std::string> refs;
    for (const auto& r : rows) refs.insert(r.ref_id);
    return {refs.begin(), refs.end()};
  }

  std::vector<std::string> distortion_types() const {
    std::set<std::string> types;
    for (const auto& r : rows) types.insert(r.distortion_type);
    return {types.begin(), types.end()};
  }

  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.image_path);
    return out;
  }

  Eigen::VectorXd mos(const std::vector<std::size_t>& indices) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) y(static_cast<Eigen::Index>(i)) = rows[indices[i]].mos;
    return y;
  }
};

inline constexpr const char* kManifestHeader = "image_id,image_path,ref_id,distortion_type,level,mos";

/// Parses a manifest CSV. Relative image paths are resolved against the
/// manifest's directory. With check_files, every image must exist.
inline DatasetManifest load_manifest(const std::string& path, bool check_files = true) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw ConfigError("manifest '" + path + "' is empty");
  const auto header = csv::split_line(lines[0]);
  const std::vector<std::string> required = {"image_id", "image_path", "ref_id", "distortion_type", "level", "mos"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& name : required) {
    if (!col.count(name)) throw ConfigError("manifest '" + path + "' is missing column '" + name + "'");
  }
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  DatasetManifest m;
  std::unordered_set<std::string> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = csv::split_line(lines[li]);
    if (f.size() != header.size()) {
      throw ConfigError("manifest '" + path + "' line " + std::to_string(li + 1) + " has " + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(header.size()));
    }
    ManifestRow row;
    row.image_id = f[col["image_id"]];
    std::filesystem::path img = f[col["image_path"]];
    row.image_path = (img.is_relative() ? base / img : img).lexically_normal().string();
    row.ref_id = f[col["ref_id"]];
    row.distortion_type = f[col["distortion_type"]];
    row.level = f[col["level"]];
    try {
      row.mos = csv::parse_double(f[col["mos"]]);
    } catch (const Error&) {
      throw ConfigError("manifest '" + path + "' line " + std::to_string(li + 1) + ": bad mos '" + f[col["mos"]] + "'");
    }
    if (!std::isfinite(row.mos)) throw ConfigError("manifest '" + path + "': non-finite mos for '" + row.image_id + "'");
    if (row.image_id.empty()) throw ConfigError("manifest '" + path + "' line " + std::to_string(li + 1) + ": empty image_id");
    if (!seen.insert(row.image_id).second) {
      throw ConfigError("manifest '" + path + "': duplicate image_id '" + row.image_id + "'");
    }
    if (check_files && !std::filesystem::exists(row.image_path)) {
      throw ConfigError("manifest '" + path + "': image file '" + row.image_path + "' for '" + row.image_id +
                        "' does not exist");
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

/// Writes a manifest; image paths are written as given.
inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  auto out = csv::open_output(path);
  out << kManifestHeader << '\n';
  for (const auto& r : m.rows) {
    out << csv::quote(r.image_id) << ',' << csv::quote(r.image_path) << ',' << csv::quote(r.ref_id) << ','
        << csv::quote(r.distortion_type) << ',' << csv::quote(r.level) << ',' << csv::format_double(r.mos) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::string> train_ref_ids;
  std::vector<std::string> test_ref_ids;
};

/// Number of training references: fraction * count rounded to nearest,
/// clamped so both sides are non-empty (29 refs at 0.8 -> 23).
inline std::size_t train_ref_count(std::size_t count, double fraction) {
  const auto t = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 0.5));
  return std::clamp<std::size_t>(t, 1, count - 1);
}

/// `repeats` independent shuffles of the sorted reference ids; split r uses
/// the seed derive_seed(seed, r).
inline std::vector<SplitSpec> make_splits(const DatasetManifest& manifest, double train_fraction, std::size_t repeats,
                                          std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  if (repeats == 0) throw ConfigError("need at least one split");
  const auto refs = manifest.ref_ids();
  if (refs.size() < 2) throw ConfigError("need at least two reference ids to split");
  const std::size_t n_train = train_ref_count(refs.size(), train_fraction);
  std::vector<SplitSpec> splits;
  for (std::size_t r = 0; r < repeats; ++r) {
    SplitSpec s;
    s.seed = derive_seed(seed, r);
    Rng rng = make_rng(s.seed);
    auto order = refs;
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    s.train_ref_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test_ref_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(s.train_ref_ids.begin(), s.train_ref_ids.end());
    std::sort(s.test_ref_ids.begin(), s.test_ref_ids.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

/// Row indices whose ref_id is in `refs`, in manifest order.
inline std::vector<std::size_t> rows_with_refs(const DatasetManifest& m, const std::vector<std::string>& refs) {
  const std::unordered_set<std::string> want(refs.begin(), refs.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.rows.size(); ++i)
    if (want.count(m.rows[i].ref_id)) out.push_back(i);
  return out;
}

/// Throws if any test row shares a reference with any training row.
inline void check_no_leakage(const DatasetManifest& m, const std::vector<std::size_t>& train,
                             const std::vector<std::size_t>& test) {
  std::unordered_set<std::string> train_refs;
  for (auto i : train) train_refs.insert(m.rows[i].ref_id);
  for (auto i : test) {
    if (train_refs.count(m.rows[i].ref_id)) {
      throw Error("test row '" + m.rows[i].image_id + "' shares reference '" + m.rows[i].ref_id + "' with training data");
    }
  }
}

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

// ---------------------------------------------------------------------------
// Subset evaluation

/// Distortion types shared by the LIVE, TID2013 and CSIQ databases.
inline const std::vector<std::string>& shared_distortions() {
  static const std::vector<std::string> kShared = {"jpeg", "jp2k", "gblur", "awgn"};
  return kShared;
}

struct SubsetWarning {
  std::string subset;
  std::string reason;
};

struct SubsetEvaluation {
  std::vector<CorrelationReport> reports;
  std::vector<SubsetWarning> warnings;
};

/// Correlations on "full", on each distortion type present, and on the
/// shared-distortion subset. Subsets with fewer than 3 rows or constant
/// scores are skipped with a warning.
inline SubsetEvaluation evaluate_subsets(const DatasetManifest& m, const std::vector<std::size_t>& rows,
                                         const Eigen::VectorXd& predictions) {
  SubsetEvaluation ev;
  auto run = [&](const std::string& label, const std::vector<std::size_t>& positions) {
    if (positions.size() < 3) {
      ev.warnings.push_back({label, "fewer than 3 samples (" + std::to_string(positions.size()) + ")"});
      return;
    }
    Eigen::VectorXd p(static_cast<Eigen::Index>(positions.size())), y(static_cast<Eigen::Index>(positions.size()));
    for (std::size_t i = 0; i < positions.size(); ++i) {
      p(static_cast<Eigen::Index>(i)) = predictions(static_cast<Eigen::Index>(positions[i]));
      y(static_cast<Eigen::Index>(i)) = m.rows[rows[positions[i]]].mos;
    }
    try {
      ev.reports.push_back(correlate(p, y, label));
    } catch (const Error& e) {
      ev.warnings.push_back({label, e.what()});
    }
  };
  std::vector<std::size_t> all(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) all[i] = i;
  run("full", all);
  std::map<std::string, std::vector<std::size_t>> by_type;
  std::vector<std::size_t> shared;
  const auto& sh = shared_distortions();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& t = m.rows[rows[i]].distortion_type;
    by_type[t].push_back(i);
    if (std::find(sh.begin(), sh.end(), t) != sh.end()) shared.push_back(i);
  }
  for (const auto& [type, pos] : by_type) run(type, pos);
  if (!shared.empty()) run("shared", shared);
  return ev;
}

// ---------------------------------------------------------------------------
// Protocol

/// Trains the default nu-SVR model on raw training features.
struct SvrTrainer {
  SvrParams params;
  SvrModel operator()(const Eigen::MatrixXd& raw, const Eigen::VectorXd& y) const {
    return train_nusvr_raw(raw, y, params);
  }
};

template <typename Model>
struct SplitOutcome {
  std::size_t split_index = 0;
  Model model;
  std::vector<std::string> train_ref_ids;
  std::vector<std::size_t> test_rows;
  Eigen::VectorXd test_predictions;
  SubsetEvaluation evaluation;
};

struct MeanReport {
  std::string subset;
  double pcc = 0.0;
  double srocc = 0.0;
  std::size_t splits = 0;
};

/// Mean pcc/srocc per subset label over the splits that reported it, in
/// first-seen label order.
inline std::vector<MeanReport> average_reports(const std::vector<std::vector<CorrelationReport>>& per_split) {
  std::vector<MeanReport> out;
  std::map<std::string, std::size_t> index;
  for (const auto& reports : per_split) {
    for (const auto& r : reports) {
      auto [it, inserted] = index.try_emplace(r.subset, out.size());
      if (inserted) out.push_back({r.subset, 0.0, 0.0, 0});
      auto& m = out[it->second];
      m.pcc += r.pcc;
      m.srocc += r.srocc;
      ++m.splits;
    }
  }
  for (auto& m : out) {
    m.pcc /= static_cast<double>(m.splits);
    m.srocc /= static_cast<double>(m.splits);
  }
  return out;
}

template <typename Model>
struct ProtocolResult {
  std::vector<SplitOutcome<Model>> splits;

  std::vector<MeanReport> means() const {
    std::vector<std::vector<CorrelationReport>> all;
    for (const auto& s : splits) all.push_back(s.evaluation.reports);
    return average_reports(all);
  }

  /// Mean of one subset; throws if no split reported it.
  MeanReport mean(const std::string& subset) const {
    for (const auto& m : means())
      if (m.subset == subset) return m;
    throw Error("no split reported subset '" + subset + "'");
  }
};

/// For every split: fit on the training rows, predict the test rows and
/// evaluate all subsets. `train(X, y)` returns a model for which
/// `predict_rows(model, X)` is found by ADL. Splits may run in parallel; the
/// result is ordered by split index.
template <typename TrainFn>
auto run_protocol(const DatasetManifest& manifest, const Eigen::MatrixXd& features,
                  const std::vector<SplitSpec>& splits, const TrainFn& train, unsigned jobs = 1) {
  using Model = std::decay_t<std::invoke_result_t<const TrainFn&, const Eigen::MatrixXd&, const Eigen::VectorXd&>>;
  if (static_cast<std::size_t>(features.rows()) != manifest.size()) {
    throw DimensionError("feature rows (" + std::to_string(features.rows()) + ") do not match manifest rows (" +
                         std::to_string(manifest.size()) + ")");
  }
  ProtocolResult<Model> result;
  result.splits.resize(splits.size());
  parallel_for(splits.size(), jobs, [&](std::size_t s) {
    const auto train_rows = rows_with_refs(manifest, splits[s].train_ref_ids);
    const auto test_rows = rows_with_refs(manifest, splits[s].test_ref_ids);
    check_no_leakage(manifest, train_rows, test_rows);
    if (train_rows.size() < 2 || test_rows.empty()) throw Error("split " + std::to_string(s) + " has too few rows");
    auto& out = result.splits[s];
    out.split_index = s;
    out.train_ref_ids = splits[s].train_ref_ids;
    out.test_rows = test_rows;
    out.model = train(select_rows(features, train_rows), manifest.mos(train_rows));
    out.test_predictions = predict_rows(out.model, select_rows(features, test_rows));
    out.evaluation = evaluate_subsets(manifest, test_rows, out.test_predictions);
  });
  return result;
}

// ---------------------------------------------------------------------------
// Cross-database evaluation

/// Maps a target-database ref_id to the source-database ref_id showing the
/// same content. CSV with header "target_ref_id,source_ref_id".
using ContentMap = std::unordered_multimap<std::string, std::string>;

inline ContentMap load_content_map(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw ConfigError("content map '" + path + "' is empty");
  const auto header = csv::split_line(lines[0]);
  if (header.size() != 2 || header[0] != "target_ref_id" || header[1] != "source_ref_id") {
    throw ConfigError("content map '" + path + "' must have header target_ref_id,source_ref_id");
  }
  ContentMap map;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = csv::split_line(lines[i]);
    if (f.size() != 2) throw ConfigError("content map '" + path + "' line " + std::to_string(i + 1) + " is malformed");
    map.emplace(f[0], f[1]);
  }
  return map;
}

/// Target rows whose content was not seen in training.
inline std::vector<std::size_t> unseen_rows(const DatasetManifest& target, const std::vector<std::string>& train_refs,
                                            const ContentMap* exclusion) {
  std::vector<std::size_t> rows;
  const std::unordered_set<std::string> trained(train_refs.begin(), train_refs.end());
  for (std::size_t i = 0; i < target.rows.size(); ++i) {
    bool seen = false;
    if (exclusion) {
      auto [lo, hi] = exclusion->equal_range(target.rows[i].ref_id);
      for (auto it = lo; it != hi && !seen; ++it) seen = trained.count(it->second) > 0;
    }
    if (!seen) rows.push_back(i);
  }
  return rows;
}

struct CrossDbResult {
  std::vector<SubsetEvaluation> per_model;
  std::vector<MeanReport> means() const {
    std::vector<std::vector<CorrelationReport>> all;
    for (const auto& e : per_model) all.push_back(e.reports);
    return average_reports(all);
  }
};

/// Evaluates every split's model on the target database, dropping target rows
/// whose content (per `exclusion`) was part of that model's training set.
template <typename Model>
CrossDbResult cross_db_eval(const ProtocolResult<Model>& trained, const DatasetManifest& target,
                            const Eigen::MatrixXd& target_features, const ContentMap* exclusion, unsigned jobs = 1) {
  if (static_cast<std::size_t>(target_features.rows()) != target.size()) {
    throw DimensionError("target feature rows do not match target manifest rows");
  }
  CrossDbResult res;
  res.per_model.resize(trained.splits.size());
  parallel_for(trained.splits.size(), jobs, [&](std::size_t s) {
    const auto& split = trained.splits[s];
    const auto rows = unseen_rows(target, split.train_ref_ids, exclusion);
    if (rows.empty()) throw Error("no target rows remain for model " + std::to_string(s) + " after exclusion");
    const Eigen::VectorXd pred = predict_rows(split.model, select_rows(target_features, rows));
    res.per_model[s] = evaluate_subsets(target, rows, pred);
  });
  return res;
}

// ---------------------------------------------------------------------------
// Feature-subset sweeps

struct SweepResult {
  std::size_t m = 0;
  double mean_pcc = 0.0;
  double mean_srocc = 0.0;
  std::vector<double> pcc;    // per split
  std::vector<double> srocc;  // per split
};

/// Trains a model on `columns` (ascending raw feature indices) for one split
/// and returns its full-test-set correlation.
inline CorrelationReport evaluate_feature_subset(const DatasetManifest& manifest, const Eigen::MatrixXd& features,
                                                 const SplitOutcome<SvrModel>& split,
                                                 const std::vector<std::size_t>& columns, const SvrParams& params) {
  const auto train_rows = rows_with_refs(manifest, split.train_ref_ids);
  const SvrModel model =
      train_nusvr_raw(select_rows(features, train_rows), manifest.mos(train_rows), params, columns);
  const Eigen::VectorXd pred = predict_rows(model, select_rows(features, split.test_rows));
  return correlate(pred, manifest.mos(split.test_rows));
}

inline std::vector<std::size_t> top_features(const std::vector<std::size_t>& ranking, std::size_t m) {
  std::vector<std::size_t> cols(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(cols.begin(), cols.end());
  return cols;
}

inline std::vector<std::size_t> bottom_features(const std::vector<std::size_t>& ranking, std::size_t m) {
  std::vector<std::size_t> cols(ranking.end() - static_cast<std::ptrdiff_t>(m), ranking.end());
  std::sort(cols.begin(), cols.end());
  return cols;
}

namespace detail {

inline SweepResult sweep_point(const DatasetManifest& manifest, const Eigen::MatrixXd& features,
                               const ProtocolResult<SvrModel>& full, std::size_t m, bool from_top,
                               const SvrParams& params, unsigned jobs) {
  const std::size_t total = static_cast<std::size_t>(features.cols());
  if (m == 0 || m > total) {
    throw ConfigError("feature subset size " + std::to_string(m) + " must lie in [1, " + std::to_string(total) + "]");
  }
  SweepResult r;
  r.m = m;
  r.pcc.resize(full.splits.size());
  r.srocc.resize(full.splits.size());
  parallel_for(full.splits.size(), jobs, [&](std::size_t s) {
    const auto ranking = feature_importance(full.splits[s].model);
    const auto cols = from_top ? top_features(ranking, m) : bottom_features(ranking, m);
    const auto rep = evaluate_feature_subset(manifest, features, full.splits[s], cols, params);
    r.pcc[s] = rep.pcc;
    r.srocc[s] = rep.srocc;
  });
  for (std::size_t s = 0; s < r.pcc.size(); ++s) {
    r.mean_pcc += r.pcc[s];
    r.mean_srocc += r.srocc[s];
  }
  r.mean_pcc /= static_cast<double>(r.pcc.size());
  r.mean_srocc /= static_cast<double>(r.srocc.size());
  return r;
}

}  // namespace detail

/// For each m: per split, retrain on that split's m most important features
/// (ranked by the split's full model, i.e. on its training data only) and
/// evaluate on the split's test rows.
inline std::vector<SweepResult> topk_sweep(const DatasetManifest& manifest, const Eigen::MatrixXd& features,
                                           const ProtocolResult<SvrModel>& full, const std::vector<std::size_t>& m_values,
                                           const SvrParams& params, unsigned jobs = 1) {
  std::vector<SweepResult> out;
  for (auto m : m_values) out.push_back(detail::sweep_point(manifest, features, full, m, true, params, jobs));
  return out;
}

struct BottomKResult {
  SweepResult sweep;
  double peak_pcc = 0.0;
  /// peak_pcc - mean pcc of the bottom-m models.
  double deviation = 0.0;
};

/// Retrains on the m least important features. The deviation is measured
/// against `peak_pcc` (e.g. the best mean pcc of a top-m sweep); when absent,
/// the full model's mean pcc is used.
inline BottomKResult bottomk_eval(const DatasetManifest& manifest, const Eigen::MatrixXd& features,
                                  const ProtocolResult<SvrModel>& full, std::size_t m, const SvrParams& params,
                                  std::optional<double> peak_pcc = std::nullopt, unsigned jobs = 1) {
  BottomKResult r;
  r.sweep = detail::sweep_point(manifest, features, full, m, false, params, jobs);
  r.peak_pcc = peak_pcc ? *peak_pcc : full.mean("full").pcc;
  r.deviation = r.peak_pcc - r.sweep.mean_pcc;
  return r;
}

// ---------------------------------------------------------------------------
// Feature extraction for a manifest

/// Row i uses the patch seed image_seed(master_seed, i).
inline Eigen::MatrixXd extract_manifest_features(const DatasetManifest& manifest, const Codebook& codebook,
                                                 const PatchParams& patches, std::uint64_t master_seed,
                                                 unsigned jobs = 1) {
  return extract_batch(codebook, manifest.paths(), patches, master_seed, jobs);
}

}  // namespace iqe
