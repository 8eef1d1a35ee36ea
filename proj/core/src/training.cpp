#include "fpformant/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "container.hpp"
#include "json_util.hpp"
#include "seed_mix.hpp"

namespace fpf {

namespace {
constexpr char kCheckpointMagic[] = "FPFCKPT1";
constexpr std::uint64_t kShuffleTag = 0x7ea17ea17ea17ea1ULL;
constexpr std::uint64_t kDropoutTag = 0xd09d09d09d09d09dULL;
}  // namespace

void TrainConfig::validate() const {
  if (alpha <= 0.0)
    throw ConfigError("train config: alpha must be positive");
  if (beta <= 0.0)
    throw ConfigError("train config: beta must be positive");
  if (batch_size == 0)
    throw ConfigError("train config: batch_size must be positive");
  if (initial_lr <= 0.0)
    throw ConfigError("train config: initial_lr must be positive");
  if (halving_interval == 0)
    throw ConfigError("train config: halving_interval must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0)
    throw ConfigError("train config: adam_beta1 must lie in [0, 1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw ConfigError("train config: adam_beta2 must lie in [0, 1)");
  if (adam_eps <= 0.0)
    throw ConfigError("train config: adam_eps must be positive");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["batch_size"] = cfg.batch_size;
  j["initial_lr"] = cfg.initial_lr;
  j["halving_interval"] = cfg.halving_interval;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["max_iterations"] = cfg.max_iterations;
  j["seed"] = cfg.seed;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json_text) {
  using namespace jsonutil;
  json j = parse_object(json_text, "train config");
  check_known_keys(j,
                   {"alpha", "beta", "batch_size", "initial_lr",
                    "halving_interval", "adam_beta1", "adam_beta2",
                    "adam_eps", "max_iterations", "seed"},
                   "train config");
  TrainConfig cfg;
  get_to_if(j, "alpha", cfg.alpha, "train config");
  get_to_if(j, "beta", cfg.beta, "train config");
  get_to_if(j, "batch_size", cfg.batch_size, "train config");
  get_to_if(j, "initial_lr", cfg.initial_lr, "train config");
  get_to_if(j, "halving_interval", cfg.halving_interval, "train config");
  get_to_if(j, "adam_beta1", cfg.adam_beta1, "train config");
  get_to_if(j, "adam_beta2", cfg.adam_beta2, "train config");
  get_to_if(j, "adam_eps", cfg.adam_eps, "train config");
  get_to_if(j, "max_iterations", cfg.max_iterations, "train config");
  get_to_if(j, "seed", cfg.seed, "train config");
  cfg.validate();
  return cfg;
}

TrainTarget make_train_target(const PhonemeUtterance& utt,
                              const PitchStats& stats) {
  std::size_t speaker = static_cast<std::size_t>(utt.speaker_id);
  if (speaker >= stats.mean_hz.size()) {
    throw ContractError("make_train_target: speaker " +
                        std::to_string(utt.speaker_id) +
                        " has no pitch statistics");
  }
  TrainTarget target;
  target.mel = utt.target_mel.to_tensor();
  target.log_durations.reserve(utt.n_phonemes());
  target.pitch_std.reserve(utt.n_phonemes());
  double mean = stats.mean_hz[speaker];
  double stddev = stats.std_hz[speaker];
  for (std::size_t i = 0; i < utt.n_phonemes(); ++i) {
    target.log_durations.push_back(
        std::log(static_cast<double>(utt.durations_frames[i]) + 1.0));
    double hz = utt.phoneme_pitch_hz[i];
    target.pitch_std.push_back(hz > 0.0 ? (hz - mean) / stddev : 0.0);
  }
  return target;
}

LossResult compute_loss(const ForwardOutput& output, const TrainTarget& target,
                        const TrainConfig& cfg) {
  if (output.mel3.shape() != target.mel.shape() ||
      output.mel1.shape() != target.mel.shape() ||
      output.mel2.shape() != target.mel.shape()) {
    throw ContractError(
        "compute_loss: decoder output shape does not match the target mel");
  }
  std::size_t n = target.log_durations.size();
  if (target.pitch_std.size() != n ||
      output.predicted_log_durations.size() != n ||
      output.predicted_pitch_std.size() != n) {
    throw ContractError(
        "compute_loss: phoneme count mismatch between output and target");
  }
  std::size_t frames = target.mel.dim(0);
  std::size_t bins = target.mel.dim(1);

  auto squared_sum = [&](const Tensor& prediction, const Tensor& truth) {
    Tensor diff = sub(prediction, truth);
    return sum(mul(diff, diff));
  };
  Tensor s1 = squared_sum(output.mel1, target.mel);
  Tensor s2 = squared_sum(output.mel2, target.mel);
  Tensor s3 = squared_sum(output.mel3, target.mel);

  double inv_n = 1.0 / static_cast<double>(n);
  Tensor pitch_mse =
      scale(squared_sum(output.predicted_pitch_std,
                        Tensor(Shape{n}, target.pitch_std, false)),
            inv_n);
  Tensor duration_mse =
      scale(squared_sum(output.predicted_log_durations,
                        Tensor(Shape{n}, target.log_durations, false)),
            inv_n);

  double inv_tm = 1.0 / static_cast<double>(frames * bins);
  Tensor total = add(add(scale(add(add(s1, s2), s3), inv_tm),
                         scale(pitch_mse, cfg.alpha)),
                     scale(duration_mse, cfg.beta));

  LossResult result;
  result.breakdown.spec_losses = {s1.value(), s2.value(), s3.value()};
  result.breakdown.pitch_loss = pitch_mse.value();
  result.breakdown.duration_loss = duration_mse.value();
  result.breakdown.total = total.value();
  result.breakdown.frames = frames;
  result.breakdown.bins = bins;
  result.total = total;
  return result;
}

OptimizerState make_optimizer_state(Model& model) {
  OptimizerState state;
  for (auto& [name, tensor] : model.named_parameters()) {
    state.m.emplace_back(tensor.size(), 0.0);
    state.v.emplace_back(tensor.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params,
               OptimizerState& state, const TrainConfig& cfg, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: moment buffers do not match the "
                        "parameter list");
  }
  state.step += 1;
  double bias1 = 1.0 - std::pow(cfg.adam_beta1,
                                static_cast<double>(state.step));
  double bias2 = 1.0 - std::pow(cfg.adam_beta2,
                                static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, tensor] = params[p];
    if (state.m[p].size() != tensor.size()) {
      throw ContractError("adam_step: moment shape mismatch for " + name);
    }
    std::span<const double> grad = tensor.has_grad()
                                       ? tensor.grad()
                                       : std::span<const double>{};
    auto weights = tensor.values_mut();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      double g = grad.empty() ? 0.0 : grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in " + name);
      }
      double& m = state.m[p][i];
      double& v = state.v[p][i];
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
      double m_hat = m / bias1;
      double v_hat = v / bias2;
      weights[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

double lr_at(std::size_t iteration, const TrainConfig& cfg) {
  std::size_t halvings = iteration / cfg.halving_interval;
  return cfg.initial_lr * std::pow(0.5, static_cast<double>(halvings));
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seedmix::mix_seed(seed, kShuffleTag, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

TrainResult train(Model& model, std::span<const PhonemeUtterance> data,
                  const TrainConfig& cfg, OptimizerState& opt,
                  std::size_t start_iteration) {
  cfg.validate();
  if (data.empty()) throw InputError("train: empty dataset");
  if (start_iteration > cfg.max_iterations) {
    throw InputError("train: start iteration " +
                     std::to_string(start_iteration) +
                     " lies beyond max_iterations");
  }

  auto params = model.named_parameters();
  if (opt.m.empty() && opt.v.empty()) opt = make_optimizer_state(model);

  std::vector<TrainTarget> targets;
  targets.reserve(data.size());
  for (const PhonemeUtterance& utt : data)
    targets.push_back(make_train_target(utt, model.pitch_stats()));

  std::size_t n = data.size();
  std::uint64_t cached_epoch = 0;
  std::vector<std::size_t> order = epoch_order(n, cfg.seed, 0);

  TrainResult result;
  for (std::size_t it = start_iteration; it < cfg.max_iterations; ++it) {
    double lr = lr_at(it, cfg);
    for (auto& [name, tensor] : params) tensor.zero_grad();

    std::mt19937_64 dropout_rng(
        seedmix::mix_seed(cfg.seed, kDropoutTag, it));

    Tape tape;
    Tensor batch_sum = Tensor::scalar(0.0);
    TrainLogEntry entry;
    entry.iteration = it;
    entry.learning_rate = lr;
    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      std::uint64_t global = static_cast<std::uint64_t>(it) * cfg.batch_size +
                             j;
      std::uint64_t epoch = global / n;
      if (epoch != cached_epoch) {
        order = epoch_order(n, cfg.seed, epoch);
        cached_epoch = epoch;
      }
      std::size_t idx = order[global % n];
      const PhonemeUtterance& utt = data[idx];

      ForwardInput input;
      input.phoneme_ids = utt.phoneme_ids;
      input.speaker_id = utt.speaker_id;
      input.gt_durations = utt.durations_frames;
      input.gt_pitch_hz = utt.phoneme_pitch_hz;
      ForwardOptions opts;
      opts.use_gt_duration = true;
      opts.use_gt_pitch = true;
      opts.training = true;
      opts.dropout_rng = &dropout_rng;

      ForwardOutput out = model.forward(input, opts);
      LossResult loss = compute_loss(out, targets[idx], cfg);
      batch_sum = add(batch_sum, loss.total);

      double tm = static_cast<double>(loss.breakdown.frames *
                                      loss.breakdown.bins);
      entry.spec_term += (loss.breakdown.spec_losses[0] +
                          loss.breakdown.spec_losses[1] +
                          loss.breakdown.spec_losses[2]) /
                         tm;
      entry.pitch_term += loss.breakdown.pitch_loss;
      entry.duration_term += loss.breakdown.duration_loss;
    }
    double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    Tensor batch_total = scale(batch_sum, inv_b);
    entry.total = batch_total.value();
    entry.spec_term *= inv_b;
    entry.pitch_term *= inv_b;
    entry.duration_term *= inv_b;
    if (!std::isfinite(entry.total)) {
      throw NumericError("train: non-finite loss at iteration " +
                         std::to_string(it));
    }
    tape.backward(batch_total);
    adam_step(params, opt, cfg, lr);
    result.log.push_back(entry);
  }
  result.end_iteration = cfg.max_iterations;
  return result;
}

// ---- checkpointing ----

void save_checkpoint(const std::string& path, Model& model,
                     const TrainConfig& train_cfg, const OptimizerState& opt,
                     std::size_t iteration) {
  container::File file;
  nlohmann::json config;
  config["model"] = nlohmann::json::parse(
      model_config_to_json(model.config()));
  config["train"] = nlohmann::json::parse(train_config_to_json(train_cfg));
  file.config_json = config.dump();

  auto params = model.named_parameters();
  if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw ContractError(
        "save_checkpoint: optimizer state does not match the model");
  }
  auto add_f64 = [&](const std::string& name, std::vector<std::uint64_t> dims,
                     std::span<const double> values) {
    container::Record rec;
    rec.name = name;
    rec.dtype = container::kF64;
    rec.dims = std::move(dims);
    rec.f64.assign(values.begin(), values.end());
    file.records.push_back(std::move(rec));
  };
  auto tensor_dims = [](const Tensor& t) {
    std::vector<std::uint64_t> dims;
    for (std::size_t d : t.shape()) dims.push_back(d);
    return dims;
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, tensor] = params[p];
    add_f64("param." + name, tensor_dims(tensor), tensor.values());
    add_f64("opt.m." + name, tensor_dims(tensor), opt.m[p]);
    add_f64("opt.v." + name, tensor_dims(tensor), opt.v[p]);
  }
  const PitchStats& stats = model.pitch_stats();
  add_f64("pitch_stats.mean_hz", {stats.mean_hz.size()}, stats.mean_hz);
  add_f64("pitch_stats.std_hz", {stats.std_hz.size()}, stats.std_hz);

  container::Record step;
  step.name = "opt.step";
  step.dtype = container::kI64;
  step.i64 = {static_cast<std::int64_t>(opt.step)};
  step.dims = {1};
  file.records.push_back(std::move(step));
  container::Record iter;
  iter.name = "iteration";
  iter.dtype = container::kI64;
  iter.i64 = {static_cast<std::int64_t>(iteration)};
  iter.dims = {1};
  file.records.push_back(std::move(iter));

  container::write_file(path, kCheckpointMagic, file);
}

Checkpoint load_checkpoint(const std::string& path) {
  container::File file = container::read_file(path, kCheckpointMagic);

  nlohmann::json config = jsonutil::parse_object(file.config_json,
                                                 "checkpoint config");
  jsonutil::check_known_keys(config, {"model", "train"}, "checkpoint config");
  if (!config.contains("model") || !config.contains("train")) {
    throw IoError(path + ": checkpoint config must carry model and train "
                         "sections");
  }
  ModelConfig model_cfg = model_config_from_json(config["model"].dump());
  TrainConfig train_cfg = train_config_from_json(config["train"].dump());

  Checkpoint ckpt{model_cfg, train_cfg, Model(model_cfg), OptimizerState{},
                  0};

  std::size_t cursor = 0;
  auto take = [&](const std::string& name) -> const container::Record& {
    if (cursor >= file.records.size()) {
      throw IoError(path + ": missing checkpoint record " + name);
    }
    const container::Record& rec = file.records[cursor++];
    if (rec.name != name) {
      throw IoError(path + ": expected checkpoint record " + name +
                    ", found " + rec.name);
    }
    return rec;
  };
  auto take_f64 = [&](const std::string& name,
                      std::size_t expected) -> const std::vector<double>& {
    const container::Record& rec = take(name);
    if (rec.dtype != container::kF64 || rec.f64.size() != expected) {
      throw IoError(path + ": checkpoint record " + name +
                    " has the wrong type or size");
    }
    return rec.f64;
  };

  auto params = ckpt.model.named_parameters();
  for (auto& [name, tensor] : params) {
    const std::vector<double>& values = take_f64("param." + name,
                                                 tensor.size());
    std::copy(values.begin(), values.end(), tensor.values_mut().begin());
    ckpt.opt.m.push_back(take_f64("opt.m." + name, tensor.size()));
    ckpt.opt.v.push_back(take_f64("opt.v." + name, tensor.size()));
  }
  PitchStats stats;
  stats.mean_hz = take_f64("pitch_stats.mean_hz", model_cfg.n_speakers);
  stats.std_hz = take_f64("pitch_stats.std_hz", model_cfg.n_speakers);
  ckpt.model.set_pitch_stats(std::move(stats));

  auto take_i64 = [&](const std::string& name) {
    const container::Record& rec = take(name);
    if (rec.dtype != container::kI64 || rec.i64.size() != 1) {
      throw IoError(path + ": checkpoint record " + name +
                    " has the wrong type or size");
    }
    return rec.i64[0];
  };
  std::int64_t step = take_i64("opt.step");
  std::int64_t iteration = take_i64("iteration");
  if (step < 0 || iteration < 0) {
    throw IoError(path + ": negative checkpoint counters");
  }
  ckpt.opt.step = static_cast<std::size_t>(step);
  ckpt.iteration = static_cast<std::size_t>(iteration);
  if (cursor != file.records.size()) {
    throw IoError(path + ": unexpected extra checkpoint record " +
                  file.records[cursor].name);
  }
  return ckpt;
}

}  // namespace fpf
