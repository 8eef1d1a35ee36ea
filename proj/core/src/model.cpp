#include "fpformant/model.hpp"

#include <cmath>
#include <string>

#include "fpformant/pitch.hpp"
#include "json_util.hpp"

namespace fpf {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

void ModelConfig::validate() const {
  if (vocab_size == 0)
    throw ConfigError("model config: vocab_size must be positive");
  if (n_speakers == 0)
    throw ConfigError("model config: n_speakers must be positive");
  if (d_model == 0 || n_heads == 0 || head_dim == 0)
    throw ConfigError(
        "model config: d_model, n_heads, head_dim must be positive");
  if (d_model != n_heads * head_dim)
    throw ConfigError("model config: d_model (" + std::to_string(d_model) +
                      ") must equal n_heads*head_dim (" +
                      std::to_string(n_heads * head_dim) + ")");
  if (conv_kernel % 2 == 0 || conv_kernel == 0)
    throw ConfigError("model config: conv_kernel must be odd");
  if (conv_hidden == 0)
    throw ConfigError("model config: conv_hidden must be positive");
  if (n_encoder_blocks == 0 || n_generator_blocks == 0 ||
      n_decoder_blocks == 0)
    throw ConfigError("model config: block counts must be positive");
  if (n_mel_bins == 0)
    throw ConfigError("model config: n_mel_bins must be positive");
  if (max_frames == 0)
    throw ConfigError("model config: max_frames must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model config: dropout must lie in [0, 1)");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["vocab_size"] = cfg.vocab_size;
  j["n_speakers"] = cfg.n_speakers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["head_dim"] = cfg.head_dim;
  j["conv_kernel"] = cfg.conv_kernel;
  j["conv_hidden"] = cfg.conv_hidden;
  j["n_encoder_blocks"] = cfg.n_encoder_blocks;
  j["n_generator_blocks"] = cfg.n_generator_blocks;
  j["n_decoder_blocks"] = cfg.n_decoder_blocks;
  j["n_mel_bins"] = cfg.n_mel_bins;
  j["max_frames"] = cfg.max_frames;
  j["extended_query"] = cfg.extended_query;
  j["dropout"] = cfg.dropout;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  using namespace jsonutil;
  json j = parse_object(json_text, "model config");
  check_known_keys(
      j,
      {"vocab_size", "n_speakers", "d_model", "n_heads", "head_dim",
       "conv_kernel", "conv_hidden", "n_encoder_blocks", "n_generator_blocks",
       "n_decoder_blocks", "n_mel_bins", "max_frames", "extended_query",
       "dropout"},
      "model config");
  ModelConfig cfg;
  get_to_if(j, "vocab_size", cfg.vocab_size, "model config");
  get_to_if(j, "n_speakers", cfg.n_speakers, "model config");
  get_to_if(j, "d_model", cfg.d_model, "model config");
  get_to_if(j, "n_heads", cfg.n_heads, "model config");
  get_to_if(j, "head_dim", cfg.head_dim, "model config");
  get_to_if(j, "conv_kernel", cfg.conv_kernel, "model config");
  get_to_if(j, "conv_hidden", cfg.conv_hidden, "model config");
  get_to_if(j, "n_encoder_blocks", cfg.n_encoder_blocks, "model config");
  get_to_if(j, "n_generator_blocks", cfg.n_generator_blocks, "model config");
  get_to_if(j, "n_decoder_blocks", cfg.n_decoder_blocks, "model config");
  get_to_if(j, "n_mel_bins", cfg.n_mel_bins, "model config");
  get_to_if(j, "max_frames", cfg.max_frames, "model config");
  get_to_if(j, "extended_query", cfg.extended_query, "model config");
  get_to_if(j, "dropout", cfg.dropout, "model config");
  cfg.validate();
  return cfg;
}

// ---- standalone building blocks ----

Tensor positional_encoding(std::size_t t_frames, std::size_t d_model,
                           std::size_t max_frames) {
  if (t_frames > max_frames) {
    throw CapacityError("positional_encoding: " + std::to_string(t_frames) +
                        " frames exceed the configured maximum of " +
                        std::to_string(max_frames));
  }
  std::vector<double> v(t_frames * d_model);
  for (std::size_t t = 0; t < t_frames; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      double exponent =
          static_cast<double>(i - (i % 2)) / static_cast<double>(d_model);
      double phase =
          static_cast<double>(t) / std::pow(10000.0, exponent);
      v[t * d_model + i] = (i % 2 == 0) ? std::sin(phase) : std::cos(phase);
    }
  }
  return Tensor(Shape{t_frames, d_model}, std::move(v), false);
}

Tensor multi_head_self_attention(const Tensor& x, const BlockWeights& w,
                                 std::size_t n_heads, std::size_t head_dim,
                                 const Tensor* pitch_addend,
                                 std::vector<Tensor>* attention_out) {
  if (pitch_addend && pitch_addend->shape() != x.shape()) {
    throw DimensionError("attention: pitch addend shape does not match input");
  }
  Tensor q_src = pitch_addend ? add(x, *pitch_addend) : x;
  Tensor q = add_row(matmul(q_src, w.w_q), w.b_q);
  Tensor k = matmul(x, w.w_k);
  Tensor v = matmul(x, w.w_v);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> contexts;
  contexts.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    std::size_t lo = h * head_dim, hi = (h + 1) * head_dim;
    Tensor qh = slice_cols(q, lo, hi);
    Tensor kh = slice_cols(k, lo, hi);
    Tensor vh = slice_cols(v, lo, hi);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    Tensor attn = softmax(scores, 1);
    if (attention_out) attention_out->push_back(attn);
    contexts.push_back(matmul(attn, vh));
  }
  Tensor ctx = contexts.size() == 1 ? contexts[0] : concat_cols(contexts);
  return matmul(ctx, w.w_o);
}

Tensor fft_block(const Tensor& x, const BlockWeights& w,
                 const ModelConfig& cfg, const Tensor* pitch_addend,
                 std::vector<Tensor>* attention_out,
                 std::mt19937_64* dropout_rng) {
  bool use_dropout = cfg.dropout > 0.0 && dropout_rng != nullptr;
  Tensor att = multi_head_self_attention(x, w, cfg.n_heads, cfg.head_dim,
                                         pitch_addend, attention_out);
  if (use_dropout) att = dropout(att, cfg.dropout, *dropout_rng);
  Tensor h1 = layer_norm(add(x, att), w.ln1_gain, w.ln1_bias, kLayerNormEps);
  Tensor ff = conv1d(relu(conv1d(h1, w.conv1_w, w.conv1_b)), w.conv2_w,
                     w.conv2_b);
  if (use_dropout) ff = dropout(ff, cfg.dropout, *dropout_rng);
  return layer_norm(add(h1, ff), w.ln2_gain, w.ln2_bias, kLayerNormEps);
}

Tensor length_regulate(const Tensor& x,
                       std::span<const std::int64_t> durations,
                       std::size_t* clamped_count) {
  if (x.rank() != 2 || durations.size() != x.dim(0)) {
    throw DimensionError("length_regulate: " +
                         std::to_string(durations.size()) +
                         " durations for a sequence of " +
                         std::to_string(x.rank() == 2 ? x.dim(0) : 0) +
                         " rows");
  }
  std::size_t clamped = 0;
  std::vector<std::int64_t> reps(durations.begin(), durations.end());
  for (std::int64_t& r : reps) {
    if (r < 1) {
      r = 1;
      ++clamped;
    }
  }
  if (clamped_count) *clamped_count = clamped;
  return repeat_rows(x, reps);
}

// ---- Model ----

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  pitch_stats_.mean_hz.assign(cfg_.n_speakers, 0.0);
  pitch_stats_.std_hz.assign(cfg_.n_speakers, 1.0);
  init(0);
}

namespace {

Tensor init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), bound, rng, true);
}

BlockWeights init_block(const ModelConfig& cfg, std::mt19937_64& rng) {
  std::size_t d = cfg.d_model, h = cfg.conv_hidden, k = cfg.conv_kernel;
  BlockWeights w;
  w.w_q = init_weight({d, d}, d, rng);
  w.b_q = Tensor::zeros({d}, true);
  w.w_k = init_weight({d, d}, d, rng);
  w.w_v = init_weight({d, d}, d, rng);
  w.w_o = init_weight({d, d}, d, rng);
  w.ln1_gain = Tensor::full({d}, 1.0, true);
  w.ln1_bias = Tensor::zeros({d}, true);
  w.conv1_w = init_weight({k, d, h}, k * d, rng);
  w.conv1_b = Tensor::zeros({h}, true);
  w.conv2_w = init_weight({k, h, d}, k * h, rng);
  w.conv2_b = Tensor::zeros({d}, true);
  w.ln2_gain = Tensor::full({d}, 1.0, true);
  w.ln2_bias = Tensor::zeros({d}, true);
  return w;
}

PredictorWeights init_predictor(const ModelConfig& cfg,
                                std::mt19937_64& rng) {
  std::size_t d = cfg.d_model, k = cfg.conv_kernel;
  PredictorWeights w;
  w.conv1_w = init_weight({k, d, d}, k * d, rng);
  w.conv1_b = Tensor::zeros({d}, true);
  w.conv2_w = init_weight({k, d, d}, k * d, rng);
  w.conv2_b = Tensor::zeros({d}, true);
  w.proj_w = init_weight({d, 1}, d, rng);
  w.proj_b = Tensor::zeros({1}, true);
  return w;
}

void collect_block(const std::string& prefix, BlockWeights& w,
                   std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".attn.w_q", w.w_q);
  out.emplace_back(prefix + ".attn.b_q", w.b_q);
  out.emplace_back(prefix + ".attn.w_k", w.w_k);
  out.emplace_back(prefix + ".attn.w_v", w.w_v);
  out.emplace_back(prefix + ".attn.w_o", w.w_o);
  out.emplace_back(prefix + ".ln1.gain", w.ln1_gain);
  out.emplace_back(prefix + ".ln1.bias", w.ln1_bias);
  out.emplace_back(prefix + ".ff.conv1.w", w.conv1_w);
  out.emplace_back(prefix + ".ff.conv1.b", w.conv1_b);
  out.emplace_back(prefix + ".ff.conv2.w", w.conv2_w);
  out.emplace_back(prefix + ".ff.conv2.b", w.conv2_b);
  out.emplace_back(prefix + ".ln2.gain", w.ln2_gain);
  out.emplace_back(prefix + ".ln2.bias", w.ln2_bias);
}

void collect_predictor(const std::string& prefix, PredictorWeights& w,
                       std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".conv1.w", w.conv1_w);
  out.emplace_back(prefix + ".conv1.b", w.conv1_b);
  out.emplace_back(prefix + ".conv2.w", w.conv2_w);
  out.emplace_back(prefix + ".conv2.b", w.conv2_b);
  out.emplace_back(prefix + ".proj.w", w.proj_w);
  out.emplace_back(prefix + ".proj.b", w.proj_b);
}

}  // namespace

void Model::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t d = cfg_.d_model, m = cfg_.n_mel_bins, k = cfg_.conv_kernel;
  weights_ = ModelWeights{};
  weights_.phoneme_embedding = init_weight({cfg_.vocab_size, d}, d, rng);
  weights_.speaker_embedding = init_weight({cfg_.n_speakers, d}, d, rng);
  for (std::size_t b = 0; b < cfg_.n_encoder_blocks; ++b)
    weights_.encoder.push_back(init_block(cfg_, rng));
  weights_.duration_predictor = init_predictor(cfg_, rng);
  weights_.pitch_predictor = init_predictor(cfg_, rng);
  weights_.pitch_conv_w = init_weight({k, 1, d}, k, rng);
  weights_.pitch_conv_b = Tensor::zeros({d}, true);
  for (std::size_t b = 0; b < cfg_.n_generator_blocks; ++b)
    weights_.formant_generator.push_back(init_block(cfg_, rng));
  for (std::size_t b = 0; b < cfg_.n_generator_blocks; ++b)
    weights_.excitation_generator.push_back(init_block(cfg_, rng));
  for (std::size_t b = 0; b < cfg_.n_decoder_blocks; ++b)
    weights_.decoder.push_back(init_block(cfg_, rng));
  weights_.fc1_w = init_weight({d, m}, d, rng);
  weights_.fc1_b = Tensor::zeros({m}, true);
  weights_.fc2_w = init_weight({d, m}, d, rng);
  weights_.fc2_b = Tensor::zeros({m}, true);
  weights_.fc3_w = init_weight({d, m}, d, rng);
  weights_.fc3_b = Tensor::zeros({m}, true);
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("phoneme_embedding", weights_.phoneme_embedding);
  out.emplace_back("speaker_embedding", weights_.speaker_embedding);
  for (std::size_t b = 0; b < weights_.encoder.size(); ++b)
    collect_block("encoder." + std::to_string(b), weights_.encoder[b], out);
  collect_predictor("duration_predictor", weights_.duration_predictor, out);
  collect_predictor("pitch_predictor", weights_.pitch_predictor, out);
  out.emplace_back("pitch_embedding.conv.w", weights_.pitch_conv_w);
  out.emplace_back("pitch_embedding.conv.b", weights_.pitch_conv_b);
  for (std::size_t b = 0; b < weights_.formant_generator.size(); ++b)
    collect_block("formant." + std::to_string(b),
                  weights_.formant_generator[b], out);
  for (std::size_t b = 0; b < weights_.excitation_generator.size(); ++b)
    collect_block("excitation." + std::to_string(b),
                  weights_.excitation_generator[b], out);
  for (std::size_t b = 0; b < weights_.decoder.size(); ++b)
    collect_block("decoder." + std::to_string(b), weights_.decoder[b], out);
  out.emplace_back("head.fc1.w", weights_.fc1_w);
  out.emplace_back("head.fc1.b", weights_.fc1_b);
  out.emplace_back("head.fc2.w", weights_.fc2_w);
  out.emplace_back("head.fc2.b", weights_.fc2_b);
  out.emplace_back("head.fc3.w", weights_.fc3_w);
  out.emplace_back("head.fc3.b", weights_.fc3_b);
  return out;
}

void Model::set_pitch_stats(PitchStats stats) {
  if (stats.mean_hz.size() != cfg_.n_speakers ||
      stats.std_hz.size() != cfg_.n_speakers) {
    throw ContractError("pitch stats: speaker count mismatch");
  }
  pitch_stats_ = std::move(stats);
}

Tensor Model::encode_text(std::span<const std::int64_t> phoneme_ids) const {
  if (phoneme_ids.empty()) {
    throw InputError("encode_text: empty phoneme sequence");
  }
  Tensor x = embedding_lookup(weights_.phoneme_embedding, phoneme_ids);
  x = add(x, positional_encoding(phoneme_ids.size(), cfg_.d_model,
                                 cfg_.max_frames));
  for (const BlockWeights& block : weights_.encoder)
    x = fft_block(x, block, cfg_);
  return x;
}

std::pair<Tensor, Tensor> Model::predict_temporal(const Tensor& hidden) const {
  auto head = [&](const PredictorWeights& w) {
    Tensor c1 = relu(conv1d(hidden, w.conv1_w, w.conv1_b));
    Tensor c2 = relu(conv1d(c1, w.conv2_w, w.conv2_b));
    Tensor proj = add_row(matmul(c2, w.proj_w), w.proj_b);  // [N, 1]
    return reshape(proj, {hidden.dim(0)});
  };
  return {head(weights_.duration_predictor), head(weights_.pitch_predictor)};
}

Tensor Model::pitch_to_embedding(const Tensor& pitch_standardized) const {
  if (pitch_standardized.rank() != 1) {
    throw DimensionError("pitch_to_embedding: expected a [N] vector");
  }
  Tensor column = reshape(pitch_standardized, {pitch_standardized.dim(0), 1});
  return conv1d(column, weights_.pitch_conv_w, weights_.pitch_conv_b);
}

std::pair<Tensor, Tensor> Model::run_generators(
    const Tensor& h, const Tensor& p, std::vector<Tensor>* attention_out,
    std::mt19937_64* dropout_rng) const {
  if (h.shape() != p.shape()) {
    throw DimensionError("run_generators: pitch stream shape differs from "
                         "the hidden stream");
  }
  Tensor f = h;
  for (const BlockWeights& block : weights_.formant_generator)
    f = fft_block(f, block, cfg_, nullptr, attention_out, dropout_rng);

  Tensor e = cfg_.extended_query ? h : add(h, p);
  for (std::size_t b = 0; b < weights_.excitation_generator.size(); ++b) {
    const Tensor* addend =
        (cfg_.extended_query && b == 0) ? &p : nullptr;
    e = fft_block(e, weights_.excitation_generator[b], cfg_, addend,
                  attention_out, dropout_rng);
  }
  return {f, e};
}

Model::DecodedMels Model::spectrogram_decoder(
    const Tensor& formant_repr, const Tensor& excitation_repr,
    std::vector<Tensor>* attention_out, std::mt19937_64* dropout_rng) const {
  if (formant_repr.shape() != excitation_repr.shape()) {
    throw DimensionError("spectrogram_decoder: representation shapes differ");
  }
  auto fc = [](const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_row(matmul(x, w), b);
  };
  DecodedMels out;
  out.mel1 = add(fc(formant_repr, weights_.fc1_w, weights_.fc1_b),
                 fc(excitation_repr, weights_.fc1_w, weights_.fc1_b));
  Tensor s = add(formant_repr, excitation_repr);
  Tensor d1 = fft_block(s, weights_.decoder[0], cfg_, nullptr, attention_out,
                        dropout_rng);
  out.mel2 = fc(d1, weights_.fc2_w, weights_.fc2_b);
  Tensor d2 = d1;
  for (std::size_t b = 1; b < weights_.decoder.size(); ++b)
    d2 = fft_block(d2, weights_.decoder[b], cfg_, nullptr, attention_out,
                   dropout_rng);
  out.mel3 = fc(d2, weights_.fc3_w, weights_.fc3_b);
  return out;
}

MelSpectrogram Model::decode_single_path(const Tensor& repr,
                                         bool as_formant) const {
  Tensor zero = Tensor::zeros(repr.shape());
  DecodedMels mels = as_formant ? spectrogram_decoder(repr, zero)
                                : spectrogram_decoder(zero, repr);
  return MelSpectrogram::from_tensor(mels.mel3);
}

ForwardOutput Model::forward(const ForwardInput& input,
                             const ForwardOptions& opts) const {
  std::size_t n = input.phoneme_ids.size();
  if (n == 0) throw InputError("forward: empty phoneme sequence");
  if (input.speaker_id < 0 ||
      input.speaker_id >= static_cast<std::int64_t>(cfg_.n_speakers)) {
    throw InputError("forward: speaker id " +
                     std::to_string(input.speaker_id) +
                     " outside the configured " +
                     std::to_string(cfg_.n_speakers) + " speakers");
  }
  std::mt19937_64* rng =
      (opts.training && cfg_.dropout > 0.0) ? opts.dropout_rng : nullptr;

  ForwardOutput out;
  Tensor hidden = encode_text(input.phoneme_ids);
  auto [log_dur, pitch_std_pred] = predict_temporal(hidden);
  out.predicted_log_durations = log_dur;
  out.predicted_pitch_std = pitch_std_pred;

  double mean = pitch_stats_.mean_hz[static_cast<std::size_t>(
      input.speaker_id)];
  double stddev =
      pitch_stats_.std_hz[static_cast<std::size_t>(input.speaker_id)];

  // durations actually used for regulation
  std::vector<std::int64_t> durations;
  if (opts.use_gt_duration) {
    if (input.gt_durations.size() != n) {
      throw InputError("forward: ground-truth durations requested but " +
                       std::to_string(input.gt_durations.size()) +
                       " values given for " + std::to_string(n) +
                       " phonemes");
    }
    durations.assign(input.gt_durations.begin(), input.gt_durations.end());
  } else {
    durations.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      double frames = std::exp(log_dur.values()[i]) - 1.0;
      durations.push_back(
          std::max<std::int64_t>(1, std::llround(frames)));
    }
  }

  // pitch in Hz, shifted, then standardized per speaker
  std::vector<double> pitch_hz(n);
  if (opts.use_gt_pitch) {
    if (input.gt_pitch_hz.size() != n) {
      throw InputError("forward: ground-truth pitch requested but " +
                       std::to_string(input.gt_pitch_hz.size()) +
                       " values given for " + std::to_string(n) +
                       " phonemes");
    }
    for (std::size_t i = 0; i < n; ++i) pitch_hz[i] = input.gt_pitch_hz[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double hz = mean + stddev * pitch_std_pred.values()[i];
      pitch_hz[i] = std::max(0.0, hz);
    }
  }
  double ratio = semitone_ratio(opts.pitch_shift_semitones);
  std::vector<double> standardized(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (pitch_hz[i] < 0.0) {
      throw InputError("forward: negative pitch value");
    }
    pitch_hz[i] = pitch_hz[i] > 0.0 ? pitch_hz[i] * ratio : 0.0;
    standardized[i] =
        pitch_hz[i] > 0.0 ? (pitch_hz[i] - mean) / stddev : 0.0;
  }
  out.predicted_pitch_hz = pitch_hz;

  Tensor pitch_input(Shape{n}, standardized, false);
  Tensor pitch_emb = pitch_to_embedding(pitch_input);

  Tensor speaker_row =
      reshape(embedding_lookup(weights_.speaker_embedding,
                               std::span<const std::int64_t>(
                                   &input.speaker_id, 1)),
              {cfg_.d_model});
  Tensor h = add_row(hidden, speaker_row);
  Tensor p = add_row(pitch_emb, speaker_row);

  Tensor h_frames = length_regulate(h, durations, &out.clamped_durations);
  Tensor p_frames = length_regulate(p, durations);
  Tensor pe = positional_encoding(h_frames.dim(0), cfg_.d_model,
                                  cfg_.max_frames);
  h_frames = add(h_frames, pe);
  p_frames = add(p_frames, pe);

  auto [formant, excitation] =
      run_generators(h_frames, p_frames, opts.attention_out, rng);
  out.formant_repr = formant;
  out.excitation_repr = excitation;

  DecodedMels mels =
      spectrogram_decoder(formant, excitation, opts.attention_out, rng);
  out.mel1 = mels.mel1;
  out.mel2 = mels.mel2;
  out.mel3 = mels.mel3;
  out.frames_per_phoneme = std::move(durations);
  return out;
}

}  // namespace fpf
