// iqe: command-line front end for codebook construction, feature extraction
// and the train/test evaluation protocol.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <unordered_map>

#include "iqe/iqe.hpp"

namespace fs = std::filesystem;
using namespace iqe;

namespace {

struct Common {
  std::uint64_t seed = 0;
  unsigned jobs = default_jobs();
  std::string out = "out";
};

struct CodebookOpts {
  std::string kind = "normal";
  std::size_t k = 10000;
  std::size_t size = 7;
  std::string manifest;
  std::size_t patches_per_image = 1000;
  std::size_t max_iters = 100;
  double zca_epsilon = 1e-6;
  std::string output;
};

struct ExtractOpts {
  std::string codebook;
  std::string manifest;
  std::size_t patch_count = 10000;
  std::string output;
};

struct ProtocolOpts {
  std::string manifest;
  std::string features;
  std::string model_name;
  std::string database;
  double nu = 0.5;
  double cost = 1.0;
  double tol = 1e-3;
  std::string box = "libsvm";
  double fraction = 0.8;
  std::size_t repeats = 10;
  std::optional<std::size_t> split_index;
};

struct CrossOpts {
  std::string target_manifest;
  std::string target_features;
  std::string target_database;
  std::string content_map;
};

struct SweepOpts {
  std::vector<std::size_t> m_values = {10, 50, 100, 200, 500, 1000};
  std::size_t bottom_m = 1000;
  std::optional<double> peak;
};

struct SpectraOpts {
  std::string codebook;
  std::size_t subset_size = 300;
  std::size_t subsets = 5;
};

struct SynthOpts {
  std::size_t refs = 24;
  std::size_t levels = 4;
  std::size_t image_size = 96;
};

std::string stem_or(const std::string& name, const std::string& path) {
  return name.empty() ? fs::path(path).stem().string() : name;
}

fs::path out_dir(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw IoError("cannot create output directory '" + c.out + "': " + ec.message());
  return fs::path(c.out);
}

/// Feature rows reordered to manifest order by image_id.
Eigen::MatrixXd features_for(const DatasetManifest& m, const std::string& path) {
  const FeatureTable t = read_features_csv(path);
  std::unordered_map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < t.image_ids.size(); ++i) index[t.image_ids[i]] = static_cast<Eigen::Index>(i);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.size()), t.values.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto it = index.find(m.rows[i].image_id);
    if (it == index.end()) {
      throw ConfigError("features file '" + path + "' has no row for image '" + m.rows[i].image_id + "'");
    }
    out.row(static_cast<Eigen::Index>(i)) = t.values.row(it->second);
  }
  return out;
}

SvrParams svr_params(const ProtocolOpts& p) {
  SvrParams s;
  s.nu = p.nu;
  s.cost = p.cost;
  s.tol = p.tol;
  s.box = parse_box_convention(p.box);
  return s;
}

std::vector<SplitSpec> chosen_splits(const DatasetManifest& m, const ProtocolOpts& p, const Common& c) {
  auto splits = make_splits(m, p.fraction, p.repeats, c.seed);
  if (p.split_index) {
    if (*p.split_index >= splits.size()) {
      throw ConfigError("--split-index " + std::to_string(*p.split_index) + " is out of range for " +
                        std::to_string(splits.size()) + " splits");
    }
    splits = {splits[*p.split_index]};
  }
  return splits;
}

std::size_t split_label(const ProtocolOpts& p, std::size_t s) { return p.split_index ? *p.split_index : s; }

void print_warnings(const std::string& where, const SubsetEvaluation& ev) {
  for (const auto& w : ev.warnings) std::cerr << "warning: " << where << ": skipped subset " << w.subset << ": " << w.reason << '\n';
}

void write_results(const fs::path& path, const std::string& model, const std::string& database,
                   const std::vector<std::pair<std::size_t, const SubsetEvaluation*>>& per_split,
                   const std::vector<MeanReport>& means) {
  auto out = csv::open_output(path.string());
  out << "model,database,subset,split_index,pcc,srocc\n";
  for (const auto& [idx, ev] : per_split) {
    for (const auto& r : ev->reports) {
      out << csv::quote(model) << ',' << csv::quote(database) << ',' << csv::quote(r.subset) << ',' << idx << ','
          << csv::format_double(r.pcc) << ',' << csv::format_double(r.srocc) << '\n';
    }
  }
  for (const auto& m : means) {
    out << csv::quote(model) << ',' << csv::quote(database) << ',' << csv::quote(m.subset) << ",mean,"
        << csv::format_double(m.pcc) << ',' << csv::format_double(m.srocc) << '\n';
    std::printf("%s %s %-10s mean over %zu splits: pcc %.4f srocc %.4f\n", model.c_str(), database.c_str(),
                m.subset.c_str(), m.splits, m.pcc, m.srocc);
  }
}

// ---------------------------------------------------------------------------

void cmd_synth(const Common& c, const SynthOpts& o) {
  SynthOptions s;
  s.n_refs = o.refs;
  s.levels = o.levels;
  s.image_size = o.image_size;
  s.seed = c.seed;
  const auto m = synth_dataset(out_dir(c).string(), s);
  std::printf("wrote %zu images over %zu references to %s\n", m.size(), m.ref_ids().size(),
              (fs::path(c.out) / "manifest.csv").string().c_str());
}

void cmd_build_codebook(const Common& c, const CodebookOpts& o) {
  const CodebookKind kind = parse_codebook_kind(o.kind);
  const std::size_t d = o.size * o.size;
  Rng rng = make_rng(c.seed);
  Codebook cb;
  if (kind == CodebookKind::normal || kind == CodebookKind::laplace || kind == CodebookKind::uniform) {
    cb = noise_codebook(kind, d, o.k, rng, c.seed);
  } else {
    if (o.manifest.empty()) throw ConfigError("--manifest is required for codebook kind '" + o.kind + "'");
    const auto m = load_manifest(o.manifest);
    std::vector<GrayImage> images;
    images.reserve(m.size());
    for (const auto& p : m.paths()) images.push_back(load_grayscale(p));
    if (kind == CodebookKind::patches) {
      cb = patch_codebook(images, o.k, o.size, rng, c.seed);
    } else {
      DescriptorSet pool;
      pool.columns.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(images.size() * o.patches_per_image));
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto s = standardize(sample_patches(images[i], o.patches_per_image, o.size, rng));
        pool.columns.middleCols(static_cast<Eigen::Index>(i * o.patches_per_image), s.columns.cols()) = s.columns;
      }
      const auto zca = fit_zca(pool, o.zca_epsilon);
      KMeansOptions km;
      km.k = o.k;
      km.max_iters = o.max_iters;
      const auto res = kmeans(apply_zca(zca, pool), km, rng, c.seed);
      std::printf("k-means: %zu iterations, converged %s, objective %.6g\n", res.iterations,
                  res.converged ? "yes" : "no", res.objective_history.empty() ? 0.0 : res.objective_history.back());
      cb = res.codebook;
    }
  }
  const std::string path =
      o.output.empty() ? (out_dir(c) / ("codebook_" + std::string(to_string(kind)) + ".cbk")).string() : o.output;
  save_codebook(cb, path);
  std::printf("codebook %s: %zu x %zu written to %s\n", std::string(to_string(kind)).c_str(), cb.dim(), cb.size(),
              path.c_str());
}

void cmd_extract(const Common& c, const ExtractOpts& o) {
  const Codebook cb = load_codebook(o.codebook);
  const auto m = load_manifest(o.manifest);
  PatchParams pp;
  pp.size = square_side(cb.dim());
  pp.count = o.patch_count;
  FeatureTable t;
  for (const auto& r : m.rows) t.image_ids.push_back(r.image_id);
  t.values = extract_manifest_features(m, cb, pp, c.seed, c.jobs);
  const std::string path = o.output.empty() ? (out_dir(c) / "features.csv").string() : o.output;
  write_features_csv(t, path);
  std::printf("features: %zu images x %td written to %s\n", m.size(), t.values.cols(), path.c_str());
}

void cmd_train(const Common& c, const ProtocolOpts& p) {
  const auto m = load_manifest(p.manifest, false);
  const auto x = features_for(m, p.features);
  const auto splits = chosen_splits(m, p, c);
  const SvrParams params = svr_params(p);
  const auto dir = out_dir(c) / "models";
  fs::create_directories(dir);
  const std::string model = stem_or(p.model_name, p.features);
  parallel_for(splits.size(), c.jobs, [&](std::size_t s) {
    const auto rows = rows_with_refs(m, splits[s].train_ref_ids);
    const auto svr = train_nusvr_raw(select_rows(x, rows), m.mos(rows), params);
    save_model(svr, (dir / (model + "_split" + std::to_string(split_label(p, s)) + ".csv")).string());
  });
  for (std::size_t s = 0; s < splits.size(); ++s) {
    std::printf("%s split %zu: trained on %zu references\n", model.c_str(), split_label(p, s),
                splits[s].train_ref_ids.size());
  }
}

ProtocolResult<SvrModel> run_full(const Common& c, const ProtocolOpts& p, const DatasetManifest& m,
                                  const Eigen::MatrixXd& x) {
  return run_protocol(m, x, chosen_splits(m, p, c), SvrTrainer{svr_params(p)}, c.jobs);
}

void cmd_evaluate(const Common& c, const ProtocolOpts& p) {
  const auto m = load_manifest(p.manifest, false);
  const auto x = features_for(m, p.features);
  const auto res = run_full(c, p, m, x);
  const std::string model = stem_or(p.model_name, p.features);
  const std::string db = stem_or(p.database, p.manifest);
  std::vector<std::pair<std::size_t, const SubsetEvaluation*>> rows;
  for (std::size_t s = 0; s < res.splits.size(); ++s) {
    rows.emplace_back(split_label(p, s), &res.splits[s].evaluation);
    print_warnings("split " + std::to_string(split_label(p, s)), res.splits[s].evaluation);
  }
  write_results(out_dir(c) / "results.csv", model, db, rows, res.means());
}

void cmd_cross(const Common& c, const ProtocolOpts& p, const CrossOpts& o) {
  const auto m = load_manifest(p.manifest, false);
  const auto x = features_for(m, p.features);
  const auto target = load_manifest(o.target_manifest, false);
  const auto tx = features_for(target, o.target_features);
  std::optional<ContentMap> map;
  if (!o.content_map.empty()) map = load_content_map(o.content_map);
  const auto trained = run_full(c, p, m, x);
  const auto res = cross_db_eval(trained, target, tx, map ? &*map : nullptr, c.jobs);
  std::vector<std::pair<std::size_t, const SubsetEvaluation*>> rows;
  for (std::size_t s = 0; s < res.per_model.size(); ++s) {
    rows.emplace_back(split_label(p, s), &res.per_model[s]);
    print_warnings("model " + std::to_string(split_label(p, s)), res.per_model[s]);
  }
  write_results(out_dir(c) / "cross_results.csv", stem_or(p.model_name, p.features),
                stem_or(o.target_database, o.target_manifest), rows, res.means());
}

void cmd_sweep(const Common& c, const ProtocolOpts& p, const SweepOpts& o) {
  const auto m = load_manifest(p.manifest, false);
  const auto x = features_for(m, p.features);
  const auto full = run_full(c, p, m, x);
  const auto sweep = topk_sweep(m, x, full, o.m_values, svr_params(p), c.jobs);
  const std::string model = stem_or(p.model_name, p.features);
  const auto dir = out_dir(c);
  auto csv_out = csv::open_output((dir / "sweep.csv").string());
  auto dat = csv::open_output((dir / "sweep.dat").string());
  csv_out << "model,m,mean_pcc,mean_srocc\n";
  dat << "# m mean_pcc\n";
  for (const auto& r : sweep) {
    csv_out << csv::quote(model) << ',' << r.m << ',' << csv::format_double(r.mean_pcc) << ','
            << csv::format_double(r.mean_srocc) << '\n';
    dat << r.m << ' ' << csv::format_double(r.mean_pcc) << '\n';
    std::printf("%s top %zu: pcc %.4f srocc %.4f\n", model.c_str(), r.m, r.mean_pcc, r.mean_srocc);
  }
}

void cmd_bottomk(const Common& c, const ProtocolOpts& p, const SweepOpts& o) {
  const auto m = load_manifest(p.manifest, false);
  const auto x = features_for(m, p.features);
  const auto full = run_full(c, p, m, x);
  const auto r = bottomk_eval(m, x, full, o.bottom_m, svr_params(p), o.peak, c.jobs);
  const std::string model = stem_or(p.model_name, p.features);
  auto out = csv::open_output((out_dir(c) / "bottomk.csv").string());
  out << "model,m,mean_pcc,mean_srocc,peak_pcc,deviation\n";
  out << csv::quote(model) << ',' << r.sweep.m << ',' << csv::format_double(r.sweep.mean_pcc) << ','
      << csv::format_double(r.sweep.mean_srocc) << ',' << csv::format_double(r.peak_pcc) << ','
      << csv::format_double(r.deviation) << '\n';
  std::printf("%s bottom %zu: pcc %.4f srocc %.4f, %.4f below peak %.4f\n", model.c_str(), r.sweep.m,
              r.sweep.mean_pcc, r.sweep.mean_srocc, r.deviation, r.peak_pcc);
}

void cmd_spectra(const Common& c, ProtocolOpts p, const SpectraOpts& o) {
  const Codebook cb = load_codebook(o.codebook);
  const auto m = load_manifest(p.manifest, false);
  const auto x = features_for(m, p.features);
  if (static_cast<std::size_t>(x.cols()) != 2 * cb.size()) {
    throw ConfigError("features have " + std::to_string(x.cols()) + " columns but the codebook implies " +
                      std::to_string(2 * cb.size()));
  }
  if (!p.split_index) p.split_index = 0;
  const auto split = chosen_splits(m, p, c).front();
  const auto rows = rows_with_refs(m, split.train_ref_ids);
  const auto svr = train_nusvr_raw(select_rows(x, rows), m.mos(rows), svr_params(p));
  const auto spectra = subset_spectra(cb, feature_importance(svr), o.subset_size, o.subsets);
  const std::string model = stem_or(p.model_name, o.codebook);
  const auto dir = out_dir(c);
  auto csv_out = csv::open_output((dir / "spectra.csv").string());
  write_spectra_csv(csv_out, model, spectra);
  auto dat = csv::open_output((dir / "spectra.dat").string());
  for (const auto& sp : spectra) {
    dat << "# " << sp.subset_label << '\n';
    for (std::size_t b = 0; b < sp.bins.size(); ++b) dat << b << ' ' << csv::format_double(sp.bins[b]) << '\n';
    dat << "\n\n";
    std::printf("%s %-14s", model.c_str(), sp.subset_label.c_str());
    for (double v : sp.bins) std::printf(" %.3f", v);
    std::printf("\n");
  }
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Master seed (IQE_SEED overrides)")->capture_default_str();
  sub->add_option("--jobs", c.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void add_protocol(CLI::App* sub, ProtocolOpts& p, bool with_split = true) {
  sub->add_option("--manifest", p.manifest, "Dataset manifest CSV")->required();
  sub->add_option("--features", p.features, "Feature CSV from 'extract'")->required();
  sub->add_option("--model-name", p.model_name, "Label for result rows (default: features file stem)");
  sub->add_option("--database", p.database, "Database label (default: manifest file stem)");
  sub->add_option("--nu", p.nu, "nu-SVR nu")->capture_default_str();
  sub->add_option("--cost", p.cost, "nu-SVR cost C")->capture_default_str();
  sub->add_option("--tol", p.tol, "Solver tolerance")->capture_default_str();
  sub->add_option("--box", p.box, "Dual box bound: libsvm (C) or per_sample (C/n)")
      ->capture_default_str()
      ->check(CLI::IsMember({"libsvm", "per_sample"}));
  sub->add_option("--train-fraction", p.fraction, "Fraction of references used for training")->capture_default_str();
  sub->add_option("--repeats", p.repeats, "Number of random splits")->capture_default_str();
  if (with_split) sub->add_option("--split-index", p.split_index, "Run only this split");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Codebook-based no-reference image quality evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Re-run from a config.txt written by a previous run");

  Common common;
  CodebookOpts cbo;
  ExtractOpts exo;
  ProtocolOpts proto;
  CrossOpts cross;
  SweepOpts sweep;
  SpectraOpts spec;
  SynthOpts syn;

  auto* build = app.add_subcommand("build-codebook", "Build a codebook and write it as CBK1");
  add_common(build, common);
  build->add_option("--kind", cbo.kind, "normal | laplace | uniform | patches | learned")
      ->capture_default_str()
      ->check(CLI::IsMember({"normal", "laplace", "uniform", "patches", "learned"}));
  build->add_option("--k", cbo.k, "Number of codes")->capture_default_str()->check(CLI::PositiveNumber);
  build->add_option("--patch-size", cbo.size, "Patch side length")->capture_default_str()->check(CLI::PositiveNumber);
  build->add_option("--manifest", cbo.manifest, "Images to sample (patches and learned kinds)");
  build->add_option("--patches-per-image", cbo.patches_per_image, "Training patches per image (learned)")
      ->capture_default_str();
  build->add_option("--max-iters", cbo.max_iters, "k-means iteration cap")->capture_default_str();
  build->add_option("--zca-epsilon", cbo.zca_epsilon, "ZCA regularizer")->capture_default_str();
  build->add_option("-o,--output", cbo.output, "Codebook file (default: <out>/codebook_<kind>.cbk)");

  auto* extract = app.add_subcommand("extract", "Extract soft-encoded max-pooled features");
  add_common(extract, common);
  extract->add_option("--codebook", exo.codebook, "CBK1 codebook file")->required();
  extract->add_option("--manifest", exo.manifest, "Dataset manifest CSV")->required();
  extract->add_option("--patch-count", exo.patch_count, "Patches per image")->capture_default_str();
  extract->add_option("-o,--output", exo.output, "Feature CSV (default: <out>/features.csv)");

  auto* train = app.add_subcommand("train", "Train one nu-SVR model per split");
  add_common(train, common);
  add_protocol(train, proto);

  auto* evaluate = app.add_subcommand("evaluate", "Train and test over random reference splits");
  add_common(evaluate, common);
  add_protocol(evaluate, proto);

  auto* cross_eval = app.add_subcommand("cross-eval", "Train on one database, test on another");
  add_common(cross_eval, common);
  add_protocol(cross_eval, proto);
  cross_eval->add_option("--target-manifest", cross.target_manifest, "Target database manifest")->required();
  cross_eval->add_option("--target-features", cross.target_features, "Target database features")->required();
  cross_eval->add_option("--target-database", cross.target_database, "Target database label");
  cross_eval->add_option("--content-map", cross.content_map, "CSV target_ref_id,source_ref_id of shared content");

  auto* topk = app.add_subcommand("sweep-topk", "Retrain on the m most important features");
  add_common(topk, common);
  add_protocol(topk, proto);
  topk->add_option("--m", sweep.m_values, "Feature counts")->capture_default_str()->delimiter(',');

  auto* bottomk = app.add_subcommand("eval-bottomk", "Retrain on the m least important features");
  add_common(bottomk, common);
  add_protocol(bottomk, proto);
  bottomk->add_option("--m", sweep.bottom_m, "Feature count")->capture_default_str();
  bottomk->add_option("--peak", sweep.peak, "Reference pcc (default: full-model mean pcc)");

  auto* spectra = app.add_subcommand("spectra", "Radial power spectra of codes grouped by importance");
  add_common(spectra, common);
  add_protocol(spectra, proto);
  spectra->add_option("--codebook", spec.codebook, "CBK1 codebook file")->required();
  spectra->add_option("--subset-size", spec.subset_size, "Codes per group")->capture_default_str();
  spectra->add_option("--subsets", spec.subsets, "Number of groups")->capture_default_str();

  auto* synth = app.add_subcommand("synth-dataset", "Write a synthetic rated image database");
  add_common(synth, common);
  synth->add_option("--refs", syn.refs, "Reference images")->capture_default_str();
  synth->add_option("--levels", syn.levels, "Severity levels per distortion")->capture_default_str();
  synth->add_option("--image-size", syn.image_size, "Image side (multiple of 8)")->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const char* env_seed = std::getenv("IQE_SEED");
  if (env_seed) {
    try {
      common.seed = static_cast<std::uint64_t>(csv::parse_int(env_seed));
    } catch (const Error&) {
      std::cerr << "error: IQE_SEED='" << env_seed << "' is not an integer\n";
      return 2;
    }
  }

  try {
    // Record the resolved configuration for reproducible re-runs.
    const auto dir = out_dir(common);
    auto cfg = csv::open_output((dir / "config.txt").string());
    for (auto* sub : app.get_subcommands()) cfg << '[' << sub->get_name() << "]\n" << sub->config_to_str(true, false);
    if (env_seed) cfg << "# IQE_SEED=" << env_seed << " overrode --seed; effective seed " << common.seed << '\n';
    cfg.close();

    if (*synth) cmd_synth(common, syn);
    else if (*build) cmd_build_codebook(common, cbo);
    else if (*extract) cmd_extract(common, exo);
    else if (*train) cmd_train(common, proto);
    else if (*evaluate) cmd_evaluate(common, proto);
    else if (*cross_eval) cmd_cross(common, proto, cross);
    else if (*topk) cmd_sweep(common, proto, sweep);
    else if (*bottomk) cmd_bottomk(common, proto, sweep);
    else if (*spectra) cmd_spectra(common, proto, spec);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
