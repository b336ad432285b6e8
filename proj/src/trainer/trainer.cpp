#include "attrcenter/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "attrcenter/synth/png_io.hpp"
#include "attrcenter/util/rng.hpp"

namespace attrcenter::trainer {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void TrainConfig::validate() const {
  lattice::validate(margins);
  losses::validate(weights);
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("train.") + name + " must be positive");
  };
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be at least 1");
  positive(learning_rate, "learning_rate");
  positive(center_alpha, "center_alpha");
  if (center_alpha > 1.0) throw std::invalid_argument("train.center_alpha must be in (0, 1]");
  if (!(separation_lr >= 0.0)) throw std::invalid_argument("train.separation_lr must be non-negative");
  if (!(center_init_scale >= 0.0)) throw std::invalid_argument("train.center_init_scale must be non-negative");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("train.grad_clip must be non-negative");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw std::invalid_argument("train.bn_momentum must be in [0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train.momentum must be in [0, 1)");
  if (embedding_dim == 0) throw std::invalid_argument("train.embedding_dim must be positive");
  if (image_height < 8 || image_width < 8) throw std::invalid_argument("train image size must be at least 8x8");
  if (augment.max_scale < 1.0) throw std::invalid_argument("augment.max_scale must be >= 1");
  if (pretrain_patience == 0) throw std::invalid_argument("train.pretrain_patience must be positive");
}

TrainConfig TrainConfig::baseline_from(TrainConfig cfg) {
  cfg.use_attributes = false;
  cfg.weights = {0.0, 1.0, 0.0};
  cfg.impostors = ImpostorPolicy::AnyIdentity;
  return cfg;
}

TrainState init_state(const lattice::AttributeSchema& schema, const TrainConfig& cfg) {
  auto pair = encoders::desk_preset(schema, cfg.embedding_dim, cfg.image_height, cfg.image_width);
  pair.photo.batch_norm = pair.sketch.batch_norm = cfg.encoder_batch_norm;
  TrainState s{lattice::CenterRegistry(schema, cfg.embedding_dim, cfg.margins),
               encoders::Encoder(pair.photo, derive_seed(cfg.seed, {stream::kInit, 1})),
               encoders::Encoder(pair.sketch, derive_seed(cfg.seed, {stream::kInit, 2})),
               {},
               {},
               cfg.seed,
               0,
               0};
  s.registry.init_centers(derive_seed(cfg.seed, {stream::kInit, 3}), cfg.center_init_scale);
  if (cfg.optimizer == Optimizer::Momentum) {
    for (const auto& p : s.photo.parameters()) s.photo_velocity.emplace_back(p.value.shape(), 0.0);
    for (const auto& p : s.sketch.parameters()) s.sketch_velocity.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

TripletSampler::TripletSampler(std::span<const synth::Sample> samples, ImpostorPolicy policy)
    : samples_(samples), policy_(policy) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[samples[i].combo].push_back(i);
  for (auto& [combo, members] : groups) {
    if (members.size() < 2) continue;
    eligible_.insert(eligible_.end(), members.begin(), members.end());
    by_combo_.emplace_back(combo, std::move(members));
  }
  std::sort(eligible_.begin(), eligible_.end());
  if (eligible_.empty()) {
    throw std::invalid_argument("no attribute combination has two or more identities; cannot form impostor pairs");
  }
}

std::vector<Triplet> TripletSampler::sample(std::size_t m, std::mt19937_64& rng) const {
  std::vector<Triplet> out;
  out.reserve(m);
  std::uniform_int_distribution<std::size_t> pick(0, eligible_.size() - 1);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t p = eligible_[pick(rng)];
    const std::size_t combo = samples_[p].combo;
    std::size_t imp = p;
    if (policy_ == ImpostorPolicy::SameCombination) {
      const auto it = std::lower_bound(by_combo_.begin(), by_combo_.end(), combo,
                                       [](const auto& g, std::size_t c) { return g.first < c; });
      const auto& members = it->second;
      std::uniform_int_distribution<std::size_t> other(0, members.size() - 2);
      imp = members[other(rng)];
      if (imp == p) imp = members.back();
    } else {
      std::uniform_int_distribution<std::size_t> other(0, samples_.size() - 2);
      imp = other(rng);
      if (imp >= p) ++imp;
    }
    out.push_back({p, imp, combo});
  }
  return out;
}

void update_centers(lattice::CenterRegistry& registry, const Tensor& embeddings, std::span<const std::size_t> labels,
                    double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("update_centers: alpha must be in [0, 1]");
  const std::size_t d = registry.dim();
  if (embeddings.rank() != 2 || embeddings.dim(1) != d || embeddings.dim(0) != labels.size()) {
    throw ad::ShapeError("update_centers: embeddings " + ad::shape_str(embeddings.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels of dim " + std::to_string(d));
  }
  if (alpha == 0.0) return;
  Tensor c = registry.centers();
  Tensor delta(c.shape(), 0.0);
  std::vector<std::size_t> count(c.dim(0), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t j = labels[i];
    if (j >= c.dim(0)) throw std::out_of_range("update_centers: label " + std::to_string(j) + " out of range");
    ++count[j];
    for (std::size_t q = 0; q < d; ++q) delta.at(j, q) += c.at(j, q) - embeddings.at(i, q);
  }
  for (std::size_t j = 0; j < c.dim(0); ++j) {
    if (count[j] == 0) continue;
    const double inv = alpha / (1.0 + static_cast<double>(count[j]));
    for (std::size_t q = 0; q < d; ++q) c.at(j, q) -= inv * delta.at(j, q);
  }
  ad::round_to_f32(c);
  registry.set_centers(std::move(c));
}

Tensor augment(const Tensor& img, const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.enabled) return img;
  Tensor out = synth::random_tps(img, rng, cfg.tps);
  out = synth::scale_crop(out, rng, {synth::image_height(img), synth::image_width(img), cfg.max_scale});
  return synth::hflip(out, rng, cfg.flip_probability);
}

namespace {

template <class Fn>
Var guarded(const char* term, Fn&& fn) {
  try {
    Var v = fn();
    if (!std::isfinite(v.value().item())) throw ad::NumericError("value is not finite");
    return v;
  } catch (const ad::NumericError& e) {
    throw ad::NumericError(std::string("non-finite ") + term + " loss: " + e.what());
  }
}

double grad_sq_norm(std::span<const Var> bound) {
  double s = 0.0;
  for (const auto& v : bound)
    for (double g : v.grad().data()) s += g * g;
  return s;
}

void sgd_update(encoders::Encoder& enc, std::span<const Var> bound, std::vector<Tensor>& velocity,
                const TrainConfig& cfg, double grad_scale) {
  auto& params = enc.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor g = bound[k].grad();
    if (grad_scale != 1.0)
      for (auto& x : g.data()) x *= grad_scale;
    Tensor& p = params[k].value;
    if (!velocity.empty()) {
      Tensor& v = velocity[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i];
        p[i] -= cfg.learning_rate * v[i];
      }
      ad::round_to_f32(v);
    } else {
      for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= cfg.learning_rate * g[i];
    }
    ad::round_to_f32(p);
  }
}

Tensor sketch_input(const Tensor& sketch, const lattice::AttributeSchema& schema, std::size_t combo, bool use_attributes) {
  if (!use_attributes) return encoders::assemble_blind_input(sketch, schema.binary_attribute_count());
  return encoders::assemble_sketch_input(sketch, schema, schema.decode(combo));
}

}  // namespace

losses::LossBreakdown train_step(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples,
                                 std::span<const Triplet> batch) {
  const std::size_t m = batch.size();
  if (m == 0) throw std::invalid_argument("train_step: empty batch");
  const auto& schema = state.registry.schema();
  auto rng = make_rng(state.seed, {stream::kAugment, state.epoch, state.step});

  std::vector<Tensor> photos, sketches;
  std::vector<std::size_t> combos;
  photos.reserve(m);
  sketches.resize(2 * m);
  combos.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& t = batch[i];
    if (t.photo >= samples.size() || t.impostor >= samples.size()) throw std::out_of_range("train_step: bad triplet index");
    const auto& p = samples[t.photo];
    const auto& q = samples[t.impostor];
    photos.push_back(augment(p.photo, cfg.augment, rng));
    sketches[i] = sketch_input(augment(p.sketch, cfg.augment, rng), schema, p.combo, cfg.use_attributes);
    sketches[m + i] = sketch_input(augment(q.sketch, cfg.augment, rng), schema, q.combo, cfg.use_attributes);
    combos.push_back(p.combo);
  }

  ad::Tape tape;
  const auto pp = state.photo.bind(tape, true);
  const auto sp = state.sketch.bind(tape, true);
  encoders::BatchStats photo_stats, sketch_stats;
  Var P = state.photo.forward(tape.constant(encoders::stack(photos)), pp, &photo_stats);
  Var S = state.sketch.forward(tape.constant(encoders::stack(sketches)), sp, &sketch_stats);
  Var G = ad::slice_rows(S, 0, m);
  Var I = ad::slice_rows(S, m, 2 * m);
  // Centers are constants here; they move by their own rules below.
  Var c_fixed = tape.constant(state.registry.centers());
  const losses::BatchEmbeddings emb{P, G, I, combos};
  Var attr = guarded("attribute", [&] { return losses::attribute_loss(emb, c_fixed, state.registry); });
  Var id = guarded("identity", [&] { return losses::identity_loss(emb, state.registry); });
  Var cen = guarded("center-separation", [&] { return losses::center_separation_loss(c_fixed, state.registry); });
  const auto terms = losses::combine(attr, id, cen, cfg.weights);
  const auto report = terms.values();
  if (!std::isfinite(report.total)) throw ad::NumericError("non-finite total loss");
  tape.backward(terms.total);

  // Joint clipping over both encoders keeps their relative step sizes.
  double grad_scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    const double norm = std::sqrt(grad_sq_norm(pp) + grad_sq_norm(sp));
    if (norm > cfg.grad_clip) grad_scale = cfg.grad_clip / norm;
  }
  sgd_update(state.photo, pp, state.photo_velocity, cfg, grad_scale);
  sgd_update(state.sketch, sp, state.sketch_velocity, cfg, grad_scale);
  state.photo.update_running_stats(photo_stats, cfg.bn_momentum);
  state.sketch.update_running_stats(sketch_stats, cfg.bn_momentum);

  Tensor all = ad::concat_rows(ad::concat_rows(P, G), I).value();
  std::vector<std::size_t> labels;
  labels.reserve(3 * m);
  for (int r = 0; r < 3; ++r) labels.insert(labels.end(), combos.begin(), combos.end());
  update_centers(state.registry, all, labels, cfg.center_alpha);
  // Push apart after the pull so the next step sees separated centers.
  if (cfg.weights.cen > 0.0 && cfg.separation_lr > 0.0) {
    ad::Tape ct;
    Var c = ct.leaf(state.registry.centers());
    ct.backward(losses::center_separation_loss(c, state.registry));
    Tensor next = c.value();
    const Tensor& g = c.grad();
    for (std::size_t i = 0; i < next.numel(); ++i) next[i] -= cfg.separation_lr * g[i];
    ad::round_to_f32(next);
    state.registry.set_centers(std::move(next));
  }

  ++state.step;
  return report;
}

void write_trace(const std::filesystem::path& path, std::span<const TraceRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw synth::IoError("cannot open " + path.string() + " for writing");
  out << "epoch,step,total,attr,id,cen\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.step, r.loss.total, r.loss.attr,
                  r.loss.id, r.loss.cen);
    out << buf;
  }
  if (!out) throw synth::IoError("write failed: " + path.string());
}

namespace {

std::size_t steps_for(const TrainConfig& cfg, std::size_t n) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  return std::max<std::size_t>(1, (n + cfg.batch_size - 1) / cfg.batch_size);
}

std::vector<TraceRow> run_epoch(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples,
                                const TripletSampler& sampler, const StepCallback& on_step) {
  std::vector<TraceRow> rows;
  const std::size_t steps = steps_for(cfg, samples.size());
  for (std::size_t s = 0; s < steps; ++s) {
    auto rng = make_rng(state.seed, {stream::kBatch, state.epoch, state.step});
    const auto batch = sampler.sample(cfg.batch_size, rng);
    const std::size_t step = state.step;
    const auto loss = train_step(state, cfg, samples, batch);
    rows.push_back({state.epoch, step, loss});
    if (on_step) on_step(rows.back());
  }
  ++state.epoch;
  return rows;
}

}  // namespace

std::vector<TraceRow> train(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples,
                            const StepCallback& on_step) {
  cfg.validate();
  const TripletSampler sampler(samples, cfg.impostors);
  std::vector<TraceRow> trace;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto rows = run_epoch(state, cfg, samples, sampler, on_step);
    trace.insert(trace.end(), rows.begin(), rows.end());
  }
  return trace;
}

PretrainReport pretrain(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> pool) {
  cfg.validate();
  const TripletSampler sampler(pool, cfg.impostors);
  PretrainReport report;
  std::size_t since_best = 0;
  for (std::size_t e = 0; e < cfg.pretrain_max_epochs; ++e) {
    const auto rows = run_epoch(state, cfg, pool, sampler, {});
    double mean = 0.0;
    for (const auto& r : rows) mean += r.loss.total;
    mean /= static_cast<double>(rows.size());
    report.epoch_losses.push_back(mean);
    ++report.epochs_run;
    if (report.epochs_run == 1 || mean < report.best_loss) {
      report.best_loss = mean;
      since_best = 0;
    } else if (++since_best >= cfg.pretrain_patience) {
      break;
    }
  }
  return report;
}

void recalibrate_batch_norm(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples) {
  if (samples.size() < 2) return;
  const auto& schema = state.registry.schema();
  std::vector<Tensor> photos, sketches;
  for (const auto& s : samples) {
    photos.push_back(s.photo);
    sketches.push_back(sketch_input(s.sketch, schema, s.combo, cfg.use_attributes));
  }
  auto refresh = [](encoders::Encoder& enc, const Tensor& x) {
    if (enc.buffers().empty()) return;
    ad::Tape tape;
    const auto params = enc.bind(tape, false);
    encoders::BatchStats stats;
    enc.forward(tape.constant(x), params, &stats);
    enc.update_running_stats(stats, 1.0);
  };
  refresh(state.photo, encoders::stack(photos));
  refresh(state.sketch, encoders::stack(sketches));
}

TrainState fit(const lattice::AttributeSchema& schema, const TrainConfig& cfg, std::span<const synth::Sample> samples,
               std::span<const synth::Sample> pool, std::vector<TraceRow>* trace) {
  cfg.validate();
  TrainState state = init_state(schema, cfg);
  if (!pool.empty()) pretrain(state, cfg, pool);
  auto rows = train(state, cfg, samples);
  recalibrate_batch_norm(state, cfg, samples);
  if (trace) *trace = std::move(rows);
  return state;
}

Tensor embed_photos(const encoders::Encoder& photo, std::span<const synth::Sample> samples) {
  const std::size_t d = photo.config().embedding_dim;
  Tensor out(Shape{samples.size(), d}, 0.0);
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < samples.size(); b += kChunk) {
    const std::size_t e = std::min(samples.size(), b + kChunk);
    std::vector<Tensor> items;
    for (std::size_t i = b; i < e; ++i) items.push_back(samples[i].photo);
    const Tensor emb = photo.encode_batch(encoders::stack(items));
    std::copy(emb.data().begin(), emb.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return out;
}

Tensor embed_sketches(const encoders::Encoder& sketch, const lattice::AttributeSchema& schema,
                      std::span<const synth::Sample> samples, bool use_attributes, std::span<const std::size_t> combos) {
  if (!combos.empty() && combos.size() != samples.size()) {
    throw std::invalid_argument("embed_sketches: combination override size mismatch");
  }
  const std::size_t d = sketch.config().embedding_dim;
  Tensor out(Shape{samples.size(), d}, 0.0);
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < samples.size(); b += kChunk) {
    const std::size_t e = std::min(samples.size(), b + kChunk);
    std::vector<Tensor> items;
    for (std::size_t i = b; i < e; ++i) {
      const std::size_t combo = combos.empty() ? samples[i].combo : combos[i];
      items.push_back(sketch_input(samples[i].sketch, schema, combo, use_attributes));
    }
    const Tensor emb = sketch.encode_batch(encoders::stack(items));
    std::copy(emb.data().begin(), emb.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return out;
}

}  // namespace attrcenter::trainer
