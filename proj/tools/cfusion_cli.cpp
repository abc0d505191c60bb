// cfusion command-line front end. Each subcommand is a thin wrapper over the
// library; exit codes: 0 success, 1 internal error, 2 config error, 3 data
// error, 4 numeric failure.

#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "cfusion/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfusion;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void note(const std::string& m) { std::cerr << m << "\n"; }

RunConfig config_from(const std::string& path) { return path.empty() ? default_run_config() : load_run_config(path); }

// NAME=VALUE
std::pair<std::string, std::string> named(const std::string& s, const char* what) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw ConfigError(std::string(what) + " must look like NAME=VALUE, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::string predictions_csv(const LabeledDataset& d, const std::vector<int>& pred) {
  std::string out = "source_id,label,pred\n";
  for (std::size_t i = 0; i < pred.size(); ++i)
    out += d.signals[i].source_id + "," + std::to_string(d.signals[i].label) + "," + std::to_string(pred[i]) + "\n";
  return out;
}

const DomainViews& views_of(const PreparedData& p, const std::string& split) {
  if (split == "train") return p.train;
  if (split == "val") return p.val;
  if (split == "test") return p.test;
  throw ConfigError("split must be train, val or test");
}

Model load_model(ModelKind kind, const fs::path& stem) { return model_from_net(kind, nn::load_net(stem)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complementarity-guided multi-domain fusion for 1D signals"};
  app.require_subcommand(1);

  std::string config_path;
  int threads = 1;
  auto add_config = [&](CLI::App* c) {
    c->add_option("-c,--config", config_path, "run configuration (JSON); defaults when omitted")->check(CLI::ExistingFile);
  };
  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", threads, "worker threads for resampling; results do not depend on it")->check(CLI::PositiveNumber);
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write the synthetic ECG dataset as per-class CSV files plus a manifest");
  std::string gen_out;
  add_config(gen);
  gen->add_option("-o,--out", gen_out, "output directory")->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run every stage end to end into one run directory");
  bool skip_adasyn = false;
  std::optional<std::uint64_t> seed_override;
  std::string output_dir, run_name;
  add_config(pipe);
  add_threads(pipe);
  pipe->add_flag("--skip-adasyn", skip_adasyn, "train without oversampling");
  pipe->add_option("--seed", seed_override, "override the config seed");
  pipe->add_option("--output-dir", output_dir, "override the config output_dir");
  pipe->add_option("--run-name", run_name, "run directory name (default: UTC timestamp)");

  // train
  auto* train = app.add_subcommand("train", "train one unimodal model");
  std::string model_name, out_dir;
  add_config(train);
  train->add_option("-m,--model", model_name, "1dcnn, 2dcnn or transformer")->required();
  train->add_option("-o,--out", out_dir, "output directory")->required();

  // features
  auto* feats = app.add_subcommand("features", "export penultimate-layer features of a trained model");
  std::string weights, split = "train", out_file;
  add_config(feats);
  feats->add_option("-m,--model", model_name, "1dcnn, 2dcnn or transformer")->required();
  feats->add_option("-w,--weights", weights, "weight stem (path without .json/.bin)")->required();
  feats->add_option("--split", split, "train (original rows only), val or test");
  feats->add_option("-o,--out", out_file, "feature CSV")->required();

  // complement
  auto* comp = app.add_subcommand("complement", "score domain pairs and pick the most complementary one");
  std::vector<std::string> feature_specs;
  int bins = 0;
  add_config(comp);
  comp->add_option("-f,--features", feature_specs, "NAME=features.csv, at least two")->required();
  comp->add_option("--bins", bins, "MI bins; 0 picks from the row count");
  comp->add_option("-o,--out", out_dir, "output directory")->required();

  // fuse
  auto* fuse = app.add_subcommand("fuse", "train an intermediate-fusion hybrid over trained unimodal models");
  std::vector<std::string> fuse_models;
  std::string weights_dir, hybrid_name = "hybrid";
  add_config(fuse);
  fuse->add_option("-m,--models", fuse_models, "two or three of 1dcnn, 2dcnn, transformer")->required()->delimiter(',');
  fuse->add_option("-w,--weights-dir", weights_dir, "directory holding <model>.json/.bin")->required();
  fuse->add_option("--name", hybrid_name, "hybrid name");
  fuse->add_option("-o,--out", out_dir, "output directory")->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "bootstrap and Bayes comparison of two prediction files");
  std::string labels, a_spec, b_spec;
  int iterations = 1000;
  std::uint64_t seed = 0;
  add_threads(cmp);
  cmp->add_option("-l,--labels", labels, "label file, path or path:column")->required();
  cmp->add_option("-a", a_spec, "predictions of model A, path or path:column")->required();
  cmp->add_option("-b", b_spec, "predictions of model B, path or path:column")->required();
  cmp->add_option("-B,--iterations", iterations, "resamples")->check(CLI::Range(100, 100000000));
  cmp->add_option("--seed", seed, "resampling seed");
  cmp->add_option("-o,--out", out_dir, "output directory")->required();

  // ablate
  auto* abl = app.add_subcommand("ablate", "metric table and pairwise comparisons over named prediction files");
  std::vector<std::string> model_specs, pair_specs;
  add_threads(abl);
  abl->add_option("-l,--labels", labels, "label file, path or path:column")->required();
  abl->add_option("-p,--pred", model_specs, "NAME=path[:column], at least two")->required();
  abl->add_option("--pair", pair_specs, "A:B:LABEL comparison (A minus B)");
  abl->add_option("-B,--iterations", iterations, "resamples")->check(CLI::Range(100, 100000000));
  abl->add_option("--seed", seed, "resampling seed");
  abl->add_option("-o,--out", out_dir, "output directory")->required();

  // report
  auto* rep = app.add_subcommand("report", "summarize a run directory as Markdown");
  std::string run_dir;
  rep->add_option("run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("-o,--out", out_file, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      auto c = config_from(config_path);
      auto s = c.synthetic;
      s.seed = hash_combine(c.seed, "synthetic");
      const auto m = write_dataset_dir(generate_synthetic(s), gen_out);
      std::cout << m.dump(2) << "\n";
    } else if (*pipe) {
      auto c = config_from(config_path);
      c.threads = threads;
      if (skip_adasyn) c.adasyn_enabled = false;
      if (seed_override) c.seed = *seed_override;
      if (!output_dir.empty()) c.output_dir = output_dir;
      if (!run_name.empty()) c.run_name = run_name;
      validate(c);
      const auto r = run_pipeline(c, note);
      std::cout << r.dir.string() << "\n";
    } else if (*train) {
      const auto c = config_from(config_path);
      const auto kind = parse_model_kind(model_name);
      const auto p = prepare_data(c, note);
      const auto t = train_unimodal(kind, p, p.split.train.num_classes(), c);
      nn::save_net(t.model.net, fs::path(out_dir) / t.name);
      io::write_file(fs::path(out_dir) / (t.name + "_history.csv"), history_csv(t.history));
      const auto pred = predict_labels(t.model.net, {view_tensor(p.test, view_of(kind))});
      io::write_file(fs::path(out_dir) / (t.name + "_test_predictions.csv"), predictions_csv(p.split.test, pred));
      std::cout << t.name << " test accuracy " << io::fmt(nn::accuracy(pred, p.split.test.labels())) << "\n";
    } else if (*feats) {
      const auto c = config_from(config_path);
      const auto kind = parse_model_kind(model_name);
      const auto p = prepare_data(c, note);
      const auto& v = views_of(p, split);
      const std::size_t end = split == "train" ? p.n_train_original : v.size();
      const auto f = extract_deep_features(load_model(kind, weights), {view_tensor(v, view_of(kind), 0, end)});
      io::write_file(out_file, matrix_to_csv(f.data));
      std::cout << f.rows() << " x " << f.cols() << " features written to " << out_file << "\n";
    } else if (*comp) {
      const auto c = config_from(config_path);
      std::vector<std::pair<std::string, FeatureMatrix>> domains;
      for (const auto& spec : feature_specs) {
        const auto [name, path] = named(spec, "--features");
        FeatureMatrix f;
        f.domain = Domain::Deep;
        f.data = matrix_from_csv(path);
        domains.emplace_back(name, std::move(f));
      }
      if (domains.size() < 2) throw ConfigError("complement needs at least two feature files");
      const int b = resolve_mi_bins(bins ? bins : c.mi_bins, static_cast<std::size_t>(domains.front().second.rows()));
      const auto r = assess(domains, c.thresholds, b);
      io::write_file(fs::path(out_dir) / "complementarity.json", to_json(r).dump(2) + "\n");
      io::write_file(fs::path(out_dir) / "complementarity.csv", to_csv(r));
      std::cout << to_csv(r);
      if (r.best_pair)
        std::cout << "best pair: " << r.best_pair->first << " + " << r.best_pair->second << "\n";
      else
        std::cout << "no complementary pair under the configured thresholds\n";
    } else if (*fuse) {
      const auto c = config_from(config_path);
      if (fuse_models.size() < 2 || fuse_models.size() > 3) throw ConfigError("fuse takes two or three models");
      const auto p = prepare_data(c, note);
      std::vector<TrainedModel> branches;
      for (const auto& m : fuse_models) {
        const auto kind = parse_model_kind(m);
        branches.push_back({m, load_model(kind, fs::path(weights_dir) / m), {}});
      }
      std::vector<const TrainedModel*> ptrs;
      for (const auto& b : branches) ptrs.push_back(&b);
      const auto h = train_hybrid(hybrid_name, ptrs, p, p.split.train.num_classes(), c);
      nn::save_net(h.hybrid.net, fs::path(out_dir) / hybrid_name);
      io::write_file(fs::path(out_dir) / (hybrid_name + "_history.csv"), history_csv(h.history));
      const auto pred = predict_labels(h.hybrid.net, hybrid_inputs(h.kinds, p.test));
      io::write_file(fs::path(out_dir) / (hybrid_name + "_test_predictions.csv"), predictions_csv(p.split.test, pred));
      std::cout << hybrid_name << " test accuracy " << io::fmt(nn::accuracy(pred, p.split.test.labels())) << "\n";
    } else if (*cmp) {
      const auto y = read_label_column(labels);
      const auto t = compare_predictions(y, read_label_column(a_spec), read_label_column(b_spec),
                                         BootstrapConfig{iterations, seed, threads, 0}, a_spec + " vs " + b_spec);
      io::write_file(fs::path(out_dir) / "diff_bootstrap.csv", diffs_to_csv(t.bootstrap));
      io::write_file(fs::path(out_dir) / "diff_bayes.csv", diffs_to_csv(t.bayes));
      nlohmann::json j = nlohmann::json::array();
      for (const auto& d : t.bayes) j.push_back(to_json(d));
      io::write_file(fs::path(out_dir) / "diff_bayes.json", j.dump(1) + "\n");
      std::cout << diffs_to_csv(t.bootstrap);
    } else if (*abl) {
      const auto y = read_label_column(labels);
      std::vector<NamedPredictions> models;
      for (const auto& s : model_specs) {
        const auto [name, spec] = named(s, "--pred");
        models.push_back({name, read_label_column(spec)});
      }
      AblationConfig ac;
      ac.bootstrap = {iterations, seed, threads, 0};
      for (const auto& s : pair_specs) {
        const auto parts = io::split(s, ':');
        if (parts.size() != 3) throw ConfigError("--pair must look like A:B:LABEL, got '" + s + "'");
        ac.pairs.push_back({parts[0], parts[1], parts[2]});
      }
      const auto t = run_ablation(models, y, ac);
      io::write_file(fs::path(out_dir) / "ablation.csv", ablation_to_csv(t));
      io::write_file(fs::path(out_dir) / "ablation.json", to_json(t).dump(2) + "\n");
      io::write_file(fs::path(out_dir) / "diff_bootstrap.csv", diffs_to_csv(t.diffs));
      std::cout << ablation_to_csv(t);
    } else if (*rep) {
      const fs::path dir(run_dir);
      const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
      std::string md = "# Run " + dir.filename().string() + "\n\n";
      md += "seed " + manifest["seed"].dump() + ", MI bins " + manifest["mi_bins"].dump() + "\n\n";
      if (manifest["fallback"].get<bool>())
        md += "No complementary pair: hybrid1 is the best unimodal model (" +
              manifest.value("fallback_source", std::string("?")) + ").\n\n";
      else
        md += "Best pair: " + manifest["best_pair"][0].get<std::string>() + " + " +
              manifest["best_pair"][1].get<std::string>() + "\n\n";
      md += "## Complementarity\n\n| a | b | corr | mi | ortho | verdict |\n|---|---|---|---|---|---|\n";
      const auto comp_lines = io::read_lines(dir / "complementarity.csv");
      for (std::size_t i = 1; i < comp_lines.size(); ++i)
        if (!comp_lines[i].empty()) {
          md += "|";
          for (const auto& cell : io::split(comp_lines[i])) md += " " + cell + " |";
          md += "\n";
        }
      md += "\n## Test metrics\n\n";
      const auto abl_lines = io::read_lines(dir / "ablation.csv");
      for (std::size_t i = 0; i < abl_lines.size(); ++i) {
        if (abl_lines[i].empty()) continue;
        md += "|";
        for (const auto& cell : io::split(abl_lines[i])) {
          std::string shown = cell;
          if (i > 0 && cell.find('.') != std::string::npos) shown = io::fmt(std::round(io::parse_double(cell) * 1e4) / 1e4);
          md += " " + shown + " |";
        }
        md += "\n";
        if (i == 0) {
          md += "|";
          for (std::size_t k = 0; k < io::split(abl_lines[0]).size(); ++k) md += "---|";
          md += "\n";
        }
      }
      md += "\n## Comparisons (A minus B)\n\n| comparison | label | metric | mean diff | 95% interval | P(diff <= 0) |\n"
            "|---|---|---|---|---|---|\n";
      const auto diff_lines = io::read_lines(dir / "diff_bootstrap.csv");
      for (std::size_t i = 1; i < diff_lines.size(); ++i) {
        if (diff_lines[i].empty()) continue;
        const auto f = io::split(diff_lines[i]);
        auto r4 = [](const std::string& s) { return io::fmt(std::round(io::parse_double(s) * 1e4) / 1e4); };
        md += "| " + f[0] + " | " + f[1] + " | " + f[2] + " | " + r4(f[3]) + " | [" + r4(f[4]) + ", " + r4(f[5]) + "] | " +
              r4(f[6]) + " |\n";
      }
      if (out_file.empty())
        std::cout << md;
      else
        io::write_file(out_file, md);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const BuildError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}
