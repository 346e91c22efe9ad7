#include "semalign/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

namespace {

using json = nlohmann::json;

constexpr char kCheckpointMagic[8] = {'S', 'M', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr ParamGroup kAllGroups[] = {ParamGroup::kFeature, ParamGroup::kDetector, ParamGroup::kAlignment,
                                     ParamGroup::kUncertainty};

bool contains(std::span<const ParamGroup> groups, ParamGroup g) {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

void set_trainable(const Model& model, std::span<const ParamGroup> groups) {
  for (ParamGroup g : kAllGroups) {
    const bool on = contains(groups, g);
    for (const NamedParam& p : model.group(g)) {
      Var v = p.var;
      v.set_requires_grad(on);
      v.zero_grad();
    }
  }
}

// (K,H,W) source maps, (K,H,W) warped target maps, (1,H,W) log-variance.
Var weighted_map_distance(const Var& ps, const Var& pw, const Var& logvar) {
  const Tensor& a = ps.value();
  const Tensor& b = pw.value();
  const Tensor& u = logvar.value();
  if (!a.same_shape(b) || u.rank() != 3 || u.channels() != 1 || u.height() != a.height() || u.width() != a.width()) {
    throw ShapeError("joint_loss: maps " + a.shape_string() + " / " + b.shape_string() + " vs uncertainty " +
                     u.shape_string());
  }
  const int k_count = a.channels();
  const std::size_t plane = a.plane();
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double d2 = 0.0;
    for (int k = 0; k < k_count; ++k) {
      const double d = a[k * plane + i] - b[k * plane + i];
      d2 += d * d;
    }
    total += std::exp(-u[i]) * d2;
  }
  return make_op(Tensor::scalar(total / plane), {ps, pw, logvar}, [k_count, plane](Node& n) {
    const Tensor& a = n.inputs[0]->value;
    const Tensor& b = n.inputs[1]->value;
    const Tensor& u = n.inputs[2]->value;
    Tensor* ga = input_grad(n, 0);
    Tensor* gb = input_grad(n, 1);
    Tensor* gu = input_grad(n, 2);
    const double g = n.grad[0] / plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double w = std::exp(-u[i]);
      double d2 = 0.0;
      for (int k = 0; k < k_count; ++k) {
        const double d = a[k * plane + i] - b[k * plane + i];
        d2 += d * d;
        if (ga) (*ga)[k * plane + i] += 2.0 * g * w * d;
        if (gb) (*gb)[k * plane + i] -= 2.0 * g * w * d;
      }
      if (gu) (*gu)[i] -= g * w * d2;
    }
  });
}

bool grads_finite(std::span<const NamedParam> params, std::string* first_bad) {
  for (const NamedParam& p : params) {
    if (p.var.has_grad() && !p.var.grad().all_finite()) {
      if (first_bad) *first_bad = p.name;
      return false;
    }
  }
  return true;
}

struct Term {
  std::string name;
  double weight;
  Var value;
};

// Backpropagates sum_t weight_t * value_t scaled by `scale` into the trainable
// parameters. On a non-finite value or gradient, re-runs each term alone to
// name the culprit and aborts.
void backward_checked(const Model& model, const std::vector<Term>& terms, double scale) {
  std::vector<std::pair<double, Var>> weighted;
  for (const Term& t : terms) {
    if (!std::isfinite(t.value.item())) {
      throw NumericalError("loss term " + t.name + " is not finite (" + std::to_string(t.value.item()) + ")");
    }
    weighted.emplace_back(t.weight, t.value);
  }
  backward(weighted_sum(weighted), scale);
  const std::vector<NamedParam> params = model.parameters();
  std::string bad_param;
  if (grads_finite(params, &bad_param)) return;
  std::string culprits;
  for (const Term& t : terms) {
    for (const NamedParam& p : params) {
      Var v = p.var;
      if (v.requires_grad()) v.zero_grad();
    }
    backward(t.value, t.weight);
    if (!grads_finite(params, nullptr)) culprits += (culprits.empty() ? "" : ", ") + t.name;
  }
  throw NumericalError("non-finite gradient in " + bad_param + " from loss term(s): " +
                       (culprits.empty() ? std::string("<combination>") : culprits));
}

json model_config_json(const ModelConfig& c) {
  return {{"encoder", {{"widths", json(c.encoder.widths)},
                       {"strides", json(c.encoder.strides)},
                       {"in_channels", c.encoder.in_channels}}},
          {"detector", {{"num_landmarks", c.detector.num_landmarks},
                        {"widths", json(c.detector.widths)},
                        {"margin", c.detector.margin},
                        {"lambda_con", c.detector.lambda_con},
                        {"lambda_sep", c.detector.lambda_sep}}},
          {"aligner", {{"widths", json(c.aligner.widths)},
                       {"uncertainty_widths", json(c.aligner.uncertainty_widths)}}},
          {"radius", c.radius},
          {"temperature", c.temperature}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  const json& e = j.at("encoder");
  c.encoder.widths = e.at("widths").get<std::vector<int>>();
  c.encoder.strides = e.at("strides").get<std::vector<int>>();
  c.encoder.in_channels = e.at("in_channels").get<int>();
  const json& d = j.at("detector");
  c.detector.num_landmarks = d.at("num_landmarks").get<int>();
  c.detector.widths = d.at("widths").get<std::vector<int>>();
  c.detector.margin = d.at("margin").get<double>();
  c.detector.lambda_con = d.at("lambda_con").get<double>();
  c.detector.lambda_sep = d.at("lambda_sep").get<double>();
  const json& a = j.at("aligner");
  c.aligner.widths = a.at("widths").get<std::vector<int>>();
  c.aligner.uncertainty_widths = a.at("uncertainty_widths").get<std::vector<int>>();
  c.radius = j.at("radius").get<int>();
  c.temperature = j.at("temperature").get<double>();
  return c;
}

json record_json(const LossRecord& r) {
  return {{"phase", r.phase}, {"alternation", r.alternation}, {"step", r.step}, {"total", r.total},
          {"l_d", r.l_d},     {"l_a", r.l_a},                 {"l_j", r.l_j},   {"l_eq", r.l_eq},
          {"l_anchor", r.l_anchor}};
}

LossRecord record_from_json(const json& j) {
  LossRecord r;
  r.phase = j.at("phase").get<std::string>();
  r.alternation = j.at("alternation").get<int>();
  r.step = j.at("step").get<std::int64_t>();
  r.total = j.at("total").get<double>();
  r.l_d = j.at("l_d").get<double>();
  r.l_a = j.at("l_a").get<double>();
  r.l_j = j.at("l_j").get<double>();
  r.l_eq = j.at("l_eq").get<double>();
  r.l_anchor = j.at("l_anchor").get<double>();
  return r;
}

void write_doubles(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_doubles(std::istream& in, Tensor& t) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw DataError("checkpoint is truncated");
}

}  // namespace

std::string group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kFeature: return "W_F";
    case ParamGroup::kDetector: return "W_D";
    case ParamGroup::kAlignment: return "W_A";
    case ParamGroup::kUncertainty: return "W_C";
  }
  return "?";
}

std::string phase_name(Phase p) { return p == Phase::kAlign ? "align" : "detect"; }

PhaseConfig PhaseConfig::align() {
  return {Phase::kAlign, 1.0, 10.0, 10.0, {ParamGroup::kFeature, ParamGroup::kAlignment, ParamGroup::kUncertainty}};
}

PhaseConfig PhaseConfig::detect() {
  return {Phase::kDetect, 10.0, 1.0, 100.0, {ParamGroup::kFeature, ParamGroup::kDetector}};
}

bool PhaseConfig::trains(ParamGroup g) const { return contains(groups, g); }

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  if (config.radius < 1) throw ConfigError("search radius must be >= 1");
  if (config.temperature <= 0) throw ConfigError("softmax temperature must be positive");
  config.detector.validate();
  Rng rng(mix_seed(seed, 0x30DE1));
  encoder_ = Encoder(config.encoder, rng);
  const int window = (2 * config.radius + 1) * (2 * config.radius + 1);
  detector_ = Detector(config.detector, config.encoder.out_channels(), window, rng);
  aligner_ = Aligner(config.aligner, window, rng);
}

std::vector<NamedParam> Model::group(ParamGroup g) const {
  switch (g) {
    case ParamGroup::kFeature: return encoder_.parameters();
    case ParamGroup::kDetector: return detector_.parameters();
    case ParamGroup::kAlignment: return aligner_.alignment_parameters();
    case ParamGroup::kUncertainty: return aligner_.uncertainty_parameters();
  }
  return {};
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> all;
  for (ParamGroup g : kAllGroups) {
    auto part = group(g);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

Model Model::clone() const {
  Model copy(config_, seed_);
  const auto src = parameters();
  const auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    Var v = dst[i].var;
    v.mutable_value() = src[i].var.value();
    v.set_requires_grad(src[i].var.requires_grad());
  }
  return copy;
}

std::uint64_t checksum(std::span<const NamedParam> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const NamedParam& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.var.value().data());
    const std::size_t n = p.var.value().size() * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

PairForward forward_pair(const Model& model, const Tensor& source, const Tensor& target) {
  PairForward f;
  f.fs = extract_features(Var(source), model.encoder());
  f.ft = extract_features(Var(target), model.encoder());
  const int r = model.config().radius;
  f.self_s = self_similarity(f.fs, r);
  f.self_t = self_similarity(f.ft, r);
  f.cross = similarity_volume(f.fs, f.ft, r);
  f.maps_s = detect(f.fs, f.self_s, model.detector());
  f.maps_t = detect(f.ft, f.self_t, model.detector());
  f.out = align(f.cross, model.aligner());
  return f;
}

LandmarkMaps detect_landmarks(const Model& model, const Tensor& image) {
  const FeatureMap f = extract_features(Var(image), model.encoder());
  return detect(f, self_similarity(f, model.config().radius), model.detector());
}

Var joint_loss(const LandmarkMaps& maps_s, const LandmarkMaps& maps_t, const AlignmentOutput& out,
               bool detach_sigma) {
  const int k = maps_s.num_landmarks();
  if (k != maps_t.num_landmarks() || maps_s.height() != maps_t.height() || maps_s.width() != maps_t.width()) {
    throw ShapeError("joint_loss: landmark maps differ in shape");
  }
  // Each landmark map is compared as a distribution over cells, as in the
  // soft-argmax; raw probabilities would let the loss vanish by draining every
  // landmark channel into the background.
  Var ps = normalize_planes(slice_channels(maps_s.prob, 1, k + 1));
  Var pt = normalize_planes(slice_channels(maps_t.prob, 1, k + 1));
  Var warped = backward_warp(pt, out.flow);
  Var logvar = detach_sigma ? detach(out.uncertainty.logvar) : out.uncertainty.logvar;
  return weighted_map_distance(ps, warped, logvar);
}

Var total_loss(const LossParts& parts, const PhaseConfig& phase) {
  return weighted_sum({{phase.lambda_d, parts.l_d}, {phase.lambda_a, parts.l_a}, {phase.lambda_j, parts.l_j}});
}

AdamState make_adam(const Model& model, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const NamedParam& p : model.parameters()) {
    s.slots.push_back({Tensor(p.var.shape(), 0.0), Tensor(p.var.shape(), 0.0), 0});
  }
  return s;
}

void optimizer_step(const Model& model, AdamState& adam, std::span<const ParamGroup> active, double lr) {
  std::size_t slot = 0;
  std::vector<std::pair<NamedParam, AdamSlot*>> todo;
  for (ParamGroup g : kAllGroups) {
    for (const NamedParam& p : model.group(g)) {
      if (slot >= adam.slots.size()) throw ShapeError("optimizer state does not match the model");
      if (contains(active, g) && p.var.has_grad()) todo.emplace_back(p, &adam.slots[slot]);
      ++slot;
    }
  }
  for (const auto& [p, s] : todo) {
    if (!p.var.grad().all_finite()) throw NumericalError("non-finite gradient in parameter " + p.name);
  }
  const AdamConfig& c = adam.config;
  for (auto& [p, s] : todo) {
    Var v = p.var;
    Tensor& w = v.mutable_value();
    const Tensor& g = p.var.grad();
    ++s->steps;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s->steps));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s->steps));
    for (std::size_t i = 0; i < w.size(); ++i) {
      s->m[i] = c.beta1 * s->m[i] + (1.0 - c.beta1) * g[i];
      s->v[i] = c.beta2 * s->v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = s->m[i] / bc1;
      const double v_hat = s->v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

double learning_rate(const TrainConfig& config, int alternation) {
  if (config.learning_rates.empty()) throw ConfigError("no learning rates configured");
  const auto& lr = config.learning_rates;
  const std::size_t stage = alternation >= 4 ? 2 : alternation >= 2 ? 1 : 0;
  return lr[std::min(stage, lr.size() - 1)];
}

TrainState init_state(const ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.model = Model(config, seed);
  s.adam = make_adam(s.model);
  s.seed = seed;
  return s;
}

AnchorSet grid_anchors(const ParametricWarp& warp, int per_axis) {
  if (per_axis < 2) throw ConfigError("anchor grid needs at least 2 points per axis");
  AnchorSet set;
  for (int y = 0; y < per_axis; ++y) {
    for (int x = 0; x < per_axis; ++x) {
      // Inset by half a cell so anchors avoid the image border.
      const Vec2 p(-1.0 + (2.0 * x + 1.0) / per_axis, -1.0 + (2.0 * y + 1.0) / per_axis);
      const Vec2 q = warp.apply(p);
      if (in_unit_box(q)) set.pairs.emplace_back(p, q);
    }
  }
  return set;
}

LossRecord pretrain_step(TrainState& state, std::span<const SamplePair> batch, const TrainConfig& config) {
  if (batch.empty()) throw DataError("empty pretraining batch");
  const ParamGroup groups[] = {ParamGroup::kFeature, ParamGroup::kDetector, ParamGroup::kAlignment};
  const Model& model = state.model;
  set_trainable(model, groups);
  LossRecord rec;
  rec.phase = "pretrain";
  rec.alternation = 0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const SamplePair& pair : batch) {
    const PairForward f = forward_pair(model, pair.source, pair.target);
    std::vector<Term> terms;
    Var det = weighted_sum({{0.5, detection_loss(f.maps_s, model.config().detector)},
                            {0.5, detection_loss(f.maps_t, model.config().detector)}});
    terms.push_back({"L_D", 1.0, det});
    rec.l_d += scale * det.item();
    try {
      Var eq = equivariance_loss(f.maps_s, f.maps_t, pair.gt);
      terms.push_back({"L_eq", config.lambda_eq, eq});
      rec.l_eq += scale * eq.item();
    } catch (const UndefinedLoss&) {
    }
    const AnchorSet anchors = grid_anchors(pair.gt.warp, config.anchor_grid);
    if (!anchors.pairs.empty()) {
      Var an = anchor_loss(f.out, anchors);
      terms.push_back({"L_anchor", config.lambda_anchor, an});
      rec.l_anchor += scale * an.item();
    }
    for (const Term& t : terms) rec.total += scale * t.weight * t.value.item();
    backward_checked(model, terms, scale);
  }
  optimizer_step(model, state.adam, groups, config.pretrain_lr);
  rec.step = ++state.step;
  state.history.push_back(rec);
  return rec;
}

LossRecord joint_step(TrainState& state, std::span<const SamplePair* const> batch, const PhaseConfig& phase,
                      double lr) {
  if (batch.empty()) throw DataError("empty training batch");
  const Model& model = state.model;
  set_trainable(model, phase.groups);
  LossRecord rec;
  rec.phase = phase_name(phase.phase);
  rec.alternation = state.alternation + 1;
  const double scale = 1.0 / static_cast<double>(batch.size());
  const int r = model.config().radius;
  const double temp = model.config().temperature;
  for (const SamplePair* pair : batch) {
    const PairForward f = forward_pair(model, pair->source, pair->target);
    LossParts parts;
    parts.l_d = weighted_sum({{0.5, detection_loss(f.maps_s, model.config().detector)},
                              {0.5, detection_loss(f.maps_t, model.config().detector)}});
    parts.l_a = alignment_prob_loss(f.fs, f.ft, f.out, r, temp);
    parts.l_j = joint_loss(f.maps_s, f.maps_t, f.out, phase.phase == Phase::kDetect);
    rec.l_d += scale * parts.l_d.item();
    rec.l_a += scale * parts.l_a.item();
    rec.l_j += scale * parts.l_j.item();
    rec.total += scale * total_loss(parts, phase).item();
    backward_checked(model,
                     {{"L_D", phase.lambda_d, parts.l_d}, {"L_A", phase.lambda_a, parts.l_a},
                      {"L_J", phase.lambda_j, parts.l_j}},
                     scale);
  }
  optimizer_step(model, state.adam, phase.groups, lr);
  rec.step = ++state.step;
  state.history.push_back(rec);
  return rec;
}

void pretrain(TrainState& state, const PairGenerator& stream, int epochs, const TrainConfig& config,
              const TrainHooks& hooks) {
  if (epochs < 0) throw ConfigError("pretraining epochs must be >= 0");
  if (epochs == 0) return;
  if (stream.config().categories.empty()) throw DataError("pretraining stream is empty");
  if (config.batch_size < 1 || config.pretrain_epoch_steps < 1) throw ConfigError("batch size and steps must be >= 1");
  for (int e = 0; e < epochs; ++e) {
    for (int s = 0; s < config.pretrain_epoch_steps; ++s) {
      std::vector<SamplePair> batch;
      for (int b = 0; b < config.batch_size; ++b) batch.push_back(stream.at(state.stream_position++));
      const LossRecord rec = pretrain_step(state, batch, config);
      if (hooks.on_step) hooks.on_step(rec);
    }
    ++state.epoch;
    if (hooks.checkpoint) hooks.checkpoint(state, "pretrain-epoch" + std::to_string(state.epoch));
  }
}

void train_joint(TrainState& state, std::span<const SamplePair> data, int alternations, const TrainConfig& config,
                 const TrainHooks& hooks) {
  if (alternations < 0) throw ConfigError("alternations must be >= 0");
  if (state.alternation + alternations > kMaxAlternations) {
    throw ConfigError("at most " + std::to_string(kMaxAlternations) + " alternations are allowed (requested " +
                      std::to_string(state.alternation + alternations) + ")");
  }
  if (alternations == 0) return;
  if (data.empty()) throw DataError("joint training set is empty");
  if (config.batch_size < 1 || config.epochs_per_phase < 0) throw ConfigError("invalid batch size or epoch count");

  std::vector<std::size_t> order(data.size());
  for (int round = 0; round < alternations; ++round) {
    const int alternation = state.alternation + 1;
    const double lr = learning_rate(config, alternation);
    for (const PhaseConfig& phase : {PhaseConfig::align(), PhaseConfig::detect()}) {
      for (int e = 0; e < config.epochs_per_phase; ++e) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(state.seed, 1000 * alternation + 10 * static_cast<int>(phase.phase) + e));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
          std::vector<const SamplePair*> batch;
          for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
            batch.push_back(&data[order[i]]);
          }
          const LossRecord rec = joint_step(state, batch, phase, lr);
          if (hooks.on_step) hooks.on_step(rec);
        }
        ++state.epoch;
      }
      if (hooks.checkpoint) {
        hooks.checkpoint(state, "alt" + std::to_string(alternation) + "-" + phase_name(phase.phase));
      }
    }
    state.alternation = alternation;
    if (hooks.after_alternation) hooks.after_alternation(state);
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");
  const auto params = state.model.parameters();
  if (params.size() != state.adam.slots.size()) throw ShapeError("optimizer state does not match the model");
  json meta;
  meta["model"] = model_config_json(state.model.config());
  meta["init_seed"] = state.model.init_seed();
  meta["seed"] = state.seed;
  meta["alternation"] = state.alternation;
  meta["epoch"] = state.epoch;
  meta["step"] = state.step;
  meta["stream_position"] = state.stream_position;
  meta["adam"] = {{"beta1", state.adam.config.beta1}, {"beta2", state.adam.config.beta2},
                  {"eps", state.adam.config.eps}};
  json hist = json::array();
  for (const LossRecord& r : state.history) hist.push_back(record_json(r));
  meta["history"] = std::move(hist);
  json evals = json::array();
  for (const EvalRecord& e : state.evals) {
    evals.push_back({{"alternation", e.alternation}, {"pck", e.pck}, {"landmark_error", e.landmark_error}});
  }
  meta["evals"] = std::move(evals);
  json plist = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    plist.push_back({{"name", params[i].name}, {"shape", params[i].var.shape()}, {"steps", state.adam.slots[i].steps}});
  }
  meta["params"] = std::move(plist);
  const std::string text = meta.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_doubles(out, params[i].var.value());
      write_doubles(out, state.adam.slots[i].m);
      write_doubles(out, state.adam.slots[i].v);
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw ConfigError(path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (len > (1ULL << 32)) throw DataError("checkpoint metadata is implausibly large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint is truncated");

  TrainState state;
  try {
    const json meta = json::parse(text);
    state.model = Model(model_config_from_json(meta.at("model")), meta.at("init_seed").get<std::uint64_t>());
    state.adam = make_adam(state.model,
                           {meta.at("adam").at("beta1").get<double>(), meta.at("adam").at("beta2").get<double>(),
                            meta.at("adam").at("eps").get<double>()});
    state.seed = meta.at("seed").get<std::uint64_t>();
    state.alternation = meta.at("alternation").get<int>();
    state.epoch = meta.at("epoch").get<int>();
    state.step = meta.at("step").get<std::int64_t>();
    state.stream_position = meta.at("stream_position").get<std::uint64_t>();
    for (const json& r : meta.at("history")) state.history.push_back(record_from_json(r));
    for (const json& e : meta.at("evals")) {
      state.evals.push_back({e.at("alternation").get<int>(), e.at("pck").get<double>(),
                             e.at("landmark_error").get<double>()});
    }
    const auto params = state.model.parameters();
    const json& plist = meta.at("params");
    if (plist.size() != params.size()) throw DataError("checkpoint parameter count does not match its model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (plist[i].at("name").get<std::string>() != params[i].name ||
          plist[i].at("shape").get<std::vector<int>>() != params[i].var.shape()) {
        throw DataError("checkpoint parameter " + std::to_string(i) + " does not match its model");
      }
      state.adam.slots[i].steps = plist[i].at("steps").get<std::int64_t>();
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var v = params[i].var;
      read_doubles(in, v.mutable_value());
      read_doubles(in, state.adam.slots[i].m);
      read_doubles(in, state.adam.slots[i].v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  return state;
}

}  // namespace semalign
