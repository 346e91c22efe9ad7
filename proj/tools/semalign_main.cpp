#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semalign/config.hpp"
#include "semalign/datagen.hpp"
#include "semalign/errors.hpp"
#include "semalign/eval.hpp"
#include "semalign/image.hpp"
#include "semalign/ops.hpp"
#include "semalign/plot.hpp"
#include "semalign/trainer.hpp"

namespace fs = std::filesystem;
using namespace semalign;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string out;
  std::string checkpoint;
  std::string data;
  std::string flows;
  std::string split = "test";
  int count = 8;
  bool quiet = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c;
  if (!o.config.empty()) {
    c = load_config(o.config);
  } else {
    std::istringstream empty;
    c = parse_config(empty);
  }
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  return c;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

TrainState require_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(o.checkpoint)) throw ConfigError("checkpoint " + o.checkpoint + " does not exist");
  return load_checkpoint(o.checkpoint);
}

std::vector<SamplePair> load_or_generate(const Options& o, const RunConfig& c) {
  if (!o.data.empty()) return read_dataset(o.data);
  return generate_dataset(c.data, c.seed, c.dataset_size, c.split);
}

std::vector<const SamplePair*> split_of(const std::vector<SamplePair>& pairs, const std::string& name) {
  auto out = select_split(pairs, parse_split(name));
  if (out.empty()) throw DataError("split '" + name + "' is empty");
  return out;
}

void log_step(const LossRecord& r, bool quiet) {
  if (quiet || r.step % 10 != 0) return;
  std::fprintf(stderr, "[%s alt %d step %lld] total %.5f L_D %.5f L_A %.5f L_J %.5f L_eq %.5f L_anchor %.5f\n",
               r.phase.c_str(), r.alternation, static_cast<long long>(r.step), r.total, r.l_d, r.l_a, r.l_j, r.l_eq,
               r.l_anchor);
}

EvalRecord evaluate(const Model& model, const std::vector<SamplePair>& pairs, int alternation, double alpha) {
  const auto train = select_split(pairs, Split::kTrain);
  auto held_out = select_split(pairs, Split::kVal);
  if (held_out.empty()) held_out = select_split(pairs, Split::kTest);
  if (held_out.empty()) throw DataError("no validation or test pairs to evaluate on");
  EvalRecord e;
  e.alternation = alternation;
  e.pck = evaluate_pck(model, held_out, {alpha}).fractions[0];
  e.landmark_error = evaluate_landmarks(model, train, held_out).mean_error;
  return e;
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  const auto pairs = generate_dataset(c.data, c.seed, c.dataset_size, c.split);
  write_dataset(out, pairs);
  std::printf("wrote %zu pairs to %s (train %zu, val %zu, test %zu)\n", pairs.size(), out.string().c_str(),
              select_split(pairs, Split::kTrain).size(), select_split(pairs, Split::kVal).size(),
              select_split(pairs, Split::kTest).size());
  return 0;
}

int cmd_pretrain(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  TrainState state = o.checkpoint.empty() ? init_state(c.model, c.seed) : require_checkpoint(o);
  if (o.checkpoint.empty()) state.adam = make_adam(state.model, c.adam);
  const PairGenerator stream(pretrain_stream_config(c), mix_seed(c.seed, 0x9E7A));
  TrainHooks hooks;
  hooks.on_step = [&o](const LossRecord& r) { log_step(r, o.quiet); };
  hooks.checkpoint = [&out](const TrainState& s, const std::string&) {
    save_checkpoint(out / "pretrain.ckpt", s);
  };
  pretrain(state, stream, c.pretrain_epochs, c.train, hooks);
  if (!o.data.empty()) {
    const auto pairs = read_dataset(o.data);
    state.evals.push_back(evaluate(state.model, pairs, 0, c.report_alpha));
    std::printf("pretrained: pck@%g %.4f landmark error %.4f\n", c.report_alpha, state.evals.back().pck,
                state.evals.back().landmark_error);
  }
  save_checkpoint(out / "pretrain.ckpt", state);
  std::printf("checkpoint %s\n", (out / "pretrain.ckpt").string().c_str());
  return 0;
}

int cmd_train_joint(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  TrainState state = require_checkpoint(o);
  const auto pairs = load_or_generate(o, c);
  std::vector<SamplePair> train;
  for (const SamplePair* p : split_of(pairs, "train")) train.push_back(*p);
  const bool have_eval = std::any_of(state.evals.begin(), state.evals.end(),
                                     [&state](const EvalRecord& e) { return e.alternation == state.alternation; });
  if (!have_eval) state.evals.push_back(evaluate(state.model, pairs, state.alternation, c.report_alpha));

  TrainHooks hooks;
  hooks.on_step = [&o](const LossRecord& r) { log_step(r, o.quiet); };
  hooks.checkpoint = [&out](const TrainState& s, const std::string& label) {
    save_checkpoint(out / (label + ".ckpt"), s);
  };
  hooks.after_alternation = [&](TrainState& s) {
    s.evals.push_back(evaluate(s.model, pairs, s.alternation, c.report_alpha));
    std::printf("alternation %d: pck@%g %.4f landmark error %.4f\n", s.alternation, c.report_alpha,
                s.evals.back().pck, s.evals.back().landmark_error);
  };
  train_joint(state, train, c.alternations, c.train, hooks);
  save_checkpoint(out / "joint.ckpt", state);
  std::printf("checkpoint %s\n", (out / "joint.ckpt").string().c_str());
  return 0;
}

int cmd_eval_pck(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto pairs = load_or_generate(o, c);
  const auto subset = split_of(pairs, o.split);
  std::vector<FlowField> flows;
  if (!o.flows.empty()) {
    for (const SamplePair* p : subset) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%06llu.flo", static_cast<unsigned long long>(p->id));
      flows.emplace_back(Var(read_flow(fs::path(o.flows) / stem)));
    }
  } else {
    flows = predict_flows(require_checkpoint(o).model, subset);
  }
  const PCKReport report = pck_report(flows, subset, c.pck_alphas);
  for (std::size_t a = 0; a < report.alphas.size(); ++a) {
    std::printf("pck@%g %.4f\n", report.alphas[a], report.fractions[a]);
  }
  if (!o.out.empty()) {
    const fs::path out = require_out(o);
    write_report(out / "pck.jsonl", pck_report_lines(report));
  }
  return 0;
}

int cmd_eval_landmarks(const Options& o) {
  const RunConfig c = resolve_config(o);
  const TrainState state = require_checkpoint(o);
  const auto pairs = load_or_generate(o, c);
  const LandmarkEval eval = evaluate_landmarks(state.model, split_of(pairs, "train"), split_of(pairs, o.split));
  for (const auto& [cat, r] : eval.per_category) {
    std::printf("%s: error %.4f over %d images (K=%d, K_gt=%d)\n", category_name(cat).c_str(), r.mean_error,
                r.test_images, r.k, r.k_gt);
  }
  std::printf("landmark error %.4f\n", eval.mean_error);
  if (!o.out.empty()) write_report(require_out(o) / "landmarks.jsonl", landmark_report_lines(eval));
  return 0;
}

Tensor upsample_flow(const FlowField& flow, int height, int width) {
  return grid_sample(flow.coords(), Var(make_grid(height, width).coords)).value();
}

int cmd_export_warps(const Options& o) {
  const RunConfig c = resolve_config(o);
  const TrainState state = require_checkpoint(o);
  const fs::path out = require_out(o);
  const auto pairs = load_or_generate(o, c);
  const auto subset = split_of(pairs, o.split);
  const int r = state.model.config().radius;
  int written = 0;
  for (const SamplePair* p : subset) {
    if (written >= o.count) break;
    const FeatureMap feat_s = extract_features(Var(p->source), state.model.encoder());
    const FeatureMap ft = extract_features(Var(p->target), state.model.encoder());
    const AlignmentOutput a = align(similarity_volume(feat_s, ft, r), state.model.aligner());
    const Tensor dense = upsample_flow(a.flow, p->source.height(), p->source.width());
    const Tensor warped = grid_sample(Var(p->target), Var(dense)).value();
    Tensor logvar = Tensor::chw(1, a.uncertainty.height(), a.uncertainty.width());
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < logvar.height(); ++y) {
      for (int x = 0; x < logvar.width(); ++x) {
        logvar.at(0, y, x) = a.uncertainty.logvar.value().at(0, y, x);
        lo = std::min(lo, logvar.at(0, y, x));
        hi = std::max(hi, logvar.at(0, y, x));
      }
    }
    for (double& v : logvar.values()) v = hi - lo > 1e-12 ? (v - lo) / (hi - lo) : 0.5;
    const Tensor sigma_up = upsample_nearest(Var(logvar), p->source.height(), p->source.width()).value();
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%06llu", static_cast<unsigned long long>(p->id));
    write_png(out / (std::string(stem) + "_source.png"), p->source);
    write_png(out / (std::string(stem) + "_target.png"), p->target);
    write_png(out / (std::string(stem) + "_warped.png"), warped);
    write_png(out / (std::string(stem) + "_uncertainty.png"), sigma_up);
    ++written;
  }
  std::printf("exported %d warps to %s\n", written, out.string().c_str());
  return 0;
}

int cmd_export_plots(const Options& o) {
  const TrainState state = require_checkpoint(o);
  const fs::path out = require_out(o);
  const std::vector<std::pair<std::string, std::array<double, 3>>> phases = {
      {"pretrain", {0.5, 0.5, 0.5}}, {"align", {0.1, 0.3, 0.8}}, {"detect", {0.85, 0.3, 0.1}}};
  std::vector<PlotSeries> loss;
  for (const auto& [name, color] : phases) {
    // One series per contiguous run of a phase, smoothed over 10 steps.
    PlotSeries cur;
    cur.color = color;
    std::vector<double> raw;
    auto flush = [&] {
      if (raw.empty()) return;
      cur.y = moving_average(raw, 10);
      loss.push_back(cur);
      cur.x.clear();
      raw.clear();
    };
    for (std::size_t i = 0; i < state.history.size(); ++i) {
      const LossRecord& r = state.history[i];
      if (r.phase != name) {
        flush();
        continue;
      }
      cur.x.push_back(static_cast<double>(r.step));
      raw.push_back(r.total);
    }
    flush();
  }
  PlotOptions lopts;
  lopts.log_y = true;
  write_line_plot(out / "loss_curve.png", loss, lopts);

  PlotSeries pck_series, err_series;
  pck_series.markers = err_series.markers = true;
  err_series.color = {0.85, 0.3, 0.1};
  for (const EvalRecord& e : state.evals) {
    pck_series.x.push_back(e.alternation);
    pck_series.y.push_back(e.pck);
    err_series.x.push_back(e.alternation);
    err_series.y.push_back(e.landmark_error);
  }
  write_line_plot(out / "pck_vs_alternation.png", std::vector<PlotSeries>{pck_series});
  write_line_plot(out / "landmark_error_vs_alternation.png", std::vector<PlotSeries>{err_series});
  std::printf("wrote loss_curve.png, pck_vs_alternation.png, landmark_error_vs_alternation.png to %s\n",
              out.string().c_str());
  return 0;
}

int cmd_show_config(const Options& o) {
  std::fputs(format_config(resolve_config(o)).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint semantic alignment and landmark detection on procedural toy data"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key = value config file");
    sub->add_option("--set", o.overrides, "override one config key (key=value), repeatable");
    sub->add_option("--seed", o.seed, "global seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    sub->add_flag("--quiet", o.quiet, "suppress per-step logging");
  };
  auto add_data = [&o](CLI::App* sub) {
    sub->add_option("--data", o.data, "dataset directory written by gen-data (generated in memory if omitted)");
    sub->add_option("--split", o.split, "evaluation split: train, val or test")->capture_default_str();
  };

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
    bool data;
  };
  const Command commands[] = {
      {"gen-data", "generate a toy pair dataset", cmd_gen_data, false},
      {"pretrain", "pretrain detector and aligner on synthetic warps", cmd_pretrain, true},
      {"train-joint", "alternating joint training from a pretrained checkpoint", cmd_train_joint, true},
      {"eval-pck", "percentage of correct keypoints", cmd_eval_pck, true},
      {"eval-landmarks", "regressed landmark error", cmd_eval_landmarks, true},
      {"export-warps", "write warped images and uncertainty maps", cmd_export_warps, true},
      {"export-plots", "write loss and PCK plots from a checkpoint", cmd_export_plots, false},
      {"show-config", "print every config key with its value", cmd_show_config, false},
  };
  int (*chosen)(const Options&) = nullptr;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (c.data) add_data(sub);
    if (std::string(c.name) == "eval-pck") sub->add_option("--flows", o.flows, "directory of precomputed .flo files");
    if (std::string(c.name) == "export-warps") sub->add_option("--count", o.count, "pairs to export");
    sub->callback([&chosen, run = c.run] { chosen = run; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    return chosen(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
