#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpformant/data.hpp"
#include "fpformant/mel.hpp"
#include "fpformant/tensor.hpp"

namespace fpf {

/// Network hyperparameters. Defaults are the desk-scale configuration; the
/// encoder/generator/decoder depths default to 6/4/2 blocks.
struct ModelConfig {
  std::size_t vocab_size = 17;  // covers corpus voiced ids + unvoiced id
  std::size_t n_speakers = 1;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t head_dim = 16;
  std::size_t conv_kernel = 3;
  std::size_t conv_hidden = 32;
  std::size_t n_encoder_blocks = 6;
  std::size_t n_generator_blocks = 4;
  std::size_t n_decoder_blocks = 2;
  std::size_t n_mel_bins = 16;
  std::size_t max_frames = 4096;
  bool extended_query = true;  // false = pitch joins the input sum instead
  double dropout = 0.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

/// One self-attention + convolutional feed-forward block's parameters.
/// Queries carry a bias (the extended-query form adds the pitch stream
/// before this projection); keys and values are plain projections.
struct BlockWeights {
  Tensor w_q, b_q, w_k, w_v, w_o;
  Tensor ln1_gain, ln1_bias;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor ln2_gain, ln2_bias;
};

/// Two convolution layers plus a per-position scalar projection.
struct PredictorWeights {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor proj_w, proj_b;
};

struct ModelWeights {
  Tensor phoneme_embedding;  // [vocab, D]
  Tensor speaker_embedding;  // [n_speakers, D]
  std::vector<BlockWeights> encoder;
  PredictorWeights duration_predictor;
  PredictorWeights pitch_predictor;
  Tensor pitch_conv_w, pitch_conv_b;  // scalar pitch -> D channels
  std::vector<BlockWeights> formant_generator;
  std::vector<BlockWeights> excitation_generator;
  std::vector<BlockWeights> decoder;
  Tensor fc1_w, fc1_b;  // shared first spectrogram head
  Tensor fc2_w, fc2_b;
  Tensor fc3_w, fc3_b;
};

struct ForwardInput {
  std::span<const std::int64_t> phoneme_ids;
  std::int64_t speaker_id = 0;
  std::span<const std::int64_t> gt_durations;  // required with use_gt_duration
  std::span<const double> gt_pitch_hz;         // required with use_gt_pitch
};

struct ForwardOptions {
  bool use_gt_duration = false;
  bool use_gt_pitch = false;
  double pitch_shift_semitones = 0.0;
  bool training = false;                    // enables dropout when configured
  std::mt19937_64* dropout_rng = nullptr;
  /// When set, the generator and decoder blocks append their per-head
  /// attention matrices here in execution order.
  std::vector<Tensor>* attention_out = nullptr;
};

struct ForwardOutput {
  Tensor mel1, mel2, mel3;          // [T, M], gradient-tracked
  Tensor predicted_log_durations;   // [N], log(frames + 1) domain
  Tensor predicted_pitch_std;       // [N], speaker-standardized domain
  std::vector<double> predicted_pitch_hz;  // [N], convenience Hz view
  Tensor formant_repr;              // [T, D]
  Tensor excitation_repr;           // [T, D]
  std::vector<std::int64_t> frames_per_phoneme;  // durations actually used
  std::size_t clamped_durations = 0;
};

// ---- standalone building blocks ----

/// Sinusoidal position table: entry (t, 2i) = sin(t / 10000^(2i/D)),
/// (t, 2i+1) = cos of the same phase. Deterministic in (T, D).
/// T > max_frames is a CapacityError.
Tensor positional_encoding(std::size_t t_frames, std::size_t d_model,
                           std::size_t max_frames);

/// Scaled dot-product attention over n_heads heads of width head_dim.
/// Keys and values always come from x; the query source is x plus
/// pitch_addend when an addend is supplied (the extended query).
Tensor multi_head_self_attention(const Tensor& x, const BlockWeights& w,
                                 std::size_t n_heads, std::size_t head_dim,
                                 const Tensor* pitch_addend = nullptr,
                                 std::vector<Tensor>* attention_out = nullptr);

/// Residual attention + residual convolutional feed-forward, each followed
/// by layer normalization.
Tensor fft_block(const Tensor& x, const BlockWeights& w,
                 const ModelConfig& cfg, const Tensor* pitch_addend = nullptr,
                 std::vector<Tensor>* attention_out = nullptr,
                 std::mt19937_64* dropout_rng = nullptr);

/// Row i repeated durations[i] times. Non-positive durations are clamped to
/// 1; the count of clamped entries is reported through clamped_count.
Tensor length_regulate(const Tensor& x,
                       std::span<const std::int64_t> durations,
                       std::size_t* clamped_count = nullptr);

class Model {
 public:
  explicit Model(ModelConfig cfg);

  /// Fresh uniform initialization (scaled by 1/sqrt(fan-in)), deterministic
  /// under the seed. Biases and layer-norm offsets start at zero.
  void init(std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelWeights& weights() { return weights_; }
  const ModelWeights& weights() const { return weights_; }

  /// Stable ordered (name, tensor) view of every trainable parameter.
  /// Handles share storage with the model, so optimizer updates apply.
  std::vector<std::pair<std::string, Tensor>> named_parameters();

  /// Per-speaker pitch standardization buffers (not trained).
  void set_pitch_stats(PitchStats stats);
  const PitchStats& pitch_stats() const { return pitch_stats_; }

  /// Text encoder: phoneme embedding + positions through the encoder stack.
  /// The speaker embedding is added later, after the temporal predictors.
  Tensor encode_text(std::span<const std::int64_t> phoneme_ids) const;

  /// Duration and pitch heads over the encoded sequence. Duration lives in
  /// log(frames + 1); pitch in the speaker-standardized domain.
  std::pair<Tensor, Tensor> predict_temporal(const Tensor& hidden) const;

  /// Standardized per-phoneme pitch -> [N, D] embedding via one conv layer.
  Tensor pitch_to_embedding(const Tensor& pitch_standardized) const;

  /// Formant stack on h alone; excitation stack on h with the pitch stream
  /// entering the first block's query (extended) or summed into the input
  /// (standard). Returns (formant_repr, excitation_repr).
  std::pair<Tensor, Tensor> run_generators(
      const Tensor& h, const Tensor& p,
      std::vector<Tensor>* attention_out = nullptr,
      std::mt19937_64* dropout_rng = nullptr) const;

  /// Three-head decoder: mel1 = shared-FC(f) + shared-FC(e); the summed
  /// representation then flows block -> FC2 -> block -> FC3.
  struct DecodedMels {
    Tensor mel1, mel2, mel3;
  };
  DecodedMels spectrogram_decoder(const Tensor& formant_repr,
                                  const Tensor& excitation_repr,
                                  std::vector<Tensor>* attention_out = nullptr,
                                  std::mt19937_64* dropout_rng = nullptr) const;

  /// Decoder applied to one representation with the other zeroed; returns
  /// the final head's mel.
  MelSpectrogram decode_single_path(const Tensor& repr,
                                    bool as_formant) const;

  ForwardOutput forward(const ForwardInput& input,
                        const ForwardOptions& opts) const;

 private:
  ModelConfig cfg_;
  ModelWeights weights_;
  PitchStats pitch_stats_;
};

}  // namespace fpf
