// Microbenchmarks for the training-dominant kernels and the end-to-end
// paths: dense/conv primitives, one transformer block forward and
// forward+backward, a full teacher-forced model pass, the distortion
// metric, and corpus generation.
#include <benchmark/benchmark.h>

#include <random>

#include "fpformant/data.hpp"
#include "fpformant/metrics.hpp"
#include "fpformant/model.hpp"
#include "fpformant/tensor.hpp"

namespace {

using namespace fpf;

constexpr std::size_t kFrames = 128;

Model& bench_model() {
  static Model model = [] {
    Model m{ModelConfig{}};
    m.init(1);
    return m;
  }();
  return model;
}

const std::vector<PhonemeUtterance>& bench_corpus() {
  static const std::vector<PhonemeUtterance> corpus = [] {
    CorpusConfig cc;
    auto data = generate_corpus(cc);
    bench_model().set_pitch_stats(compute_pitch_stats(data, cc.n_speakers));
    return data;
  }();
  return corpus;
}

void BM_matmul(benchmark::State& state) {
  std::mt19937_64 rng(2);
  Tensor a = Tensor::uniform({kFrames, 32}, 1.0, rng, false);
  Tensor b = Tensor::uniform({32, 32}, 1.0, rng, false);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_matmul);

void BM_conv1d(benchmark::State& state) {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::uniform({kFrames, 32}, 1.0, rng, false);
  Tensor w = Tensor::uniform({3, 32, 32}, 1.0, rng, false);
  Tensor b = Tensor::uniform({32}, 1.0, rng, false);
  for (auto _ : state) {
    Tensor y = conv1d(x, w, b);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_conv1d);

void BM_fft_block_forward(benchmark::State& state) {
  Model& model = bench_model();
  std::mt19937_64 rng(4);
  Tensor x = Tensor::uniform({kFrames, model.config().d_model}, 1.0, rng,
                             false);
  const BlockWeights& block = model.weights().formant_generator.front();
  for (auto _ : state) {
    Tensor y = fft_block(x, block, model.config());
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_fft_block_forward);

void BM_fft_block_train_step(benchmark::State& state) {
  Model& model = bench_model();
  std::mt19937_64 rng(5);
  Tensor x = Tensor::uniform({kFrames, model.config().d_model}, 1.0, rng,
                             true);
  const BlockWeights& block = model.weights().formant_generator.front();
  for (auto _ : state) {
    Tape tape;
    Tensor loss = sum(fft_block(x, block, model.config()));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_fft_block_train_step);

void BM_model_forward(benchmark::State& state) {
  const auto& corpus = bench_corpus();
  Model& model = bench_model();
  const PhonemeUtterance& utt = corpus.front();
  ForwardInput in;
  in.phoneme_ids = utt.phoneme_ids;
  in.speaker_id = utt.speaker_id;
  in.gt_durations = utt.durations_frames;
  in.gt_pitch_hz = utt.phoneme_pitch_hz;
  ForwardOptions fo;
  fo.use_gt_duration = true;
  fo.use_gt_pitch = true;
  for (auto _ : state) {
    ForwardOutput out = model.forward(in, fo);
    benchmark::DoNotOptimize(out.mel3.values().data());
  }
}
BENCHMARK(BM_model_forward);

void BM_mcd(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  MelSpectrogram a, b;
  a.frames = b.frames = 200;
  a.bins = b.bins = 16;
  a.values.resize(a.frames * a.bins);
  b.values.resize(b.frames * b.bins);
  for (double& v : a.values) v = dist(rng);
  for (double& v : b.values) v = dist(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcd(a, b, 13));
  }
}
BENCHMARK(BM_mcd);

void BM_corpus_generation(benchmark::State& state) {
  CorpusConfig cc;
  for (auto _ : state) {
    auto corpus = generate_corpus(cc);
    benchmark::DoNotOptimize(corpus.data());
  }
}
BENCHMARK(BM_corpus_generation);

}  // namespace

BENCHMARK_MAIN();
