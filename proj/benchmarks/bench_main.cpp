// Microbenchmarks for the hot paths: policy math, cache-key hashing,
// template rendering, verdict parsing and tallying, heuristic scoring.

#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "dpg/generation.hpp"
#include "dpg/hashing.hpp"
#include "dpg/judge.hpp"
#include "dpg/metrics.hpp"
#include "dpg/policy.hpp"
#include "dpg/reward.hpp"
#include "dpg/types.hpp"

namespace {

std::vector<double> random_theta(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::vector<double> theta(static_cast<std::size_t>(k));
  for (double& v : theta) v = unif(rng);
  return theta;
}

void BM_SoftmaxProbs(benchmark::State& state) {
  const auto theta = random_theta(static_cast<int>(state.range(0)), 42);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::policy::probs(theta));
  }
}
BENCHMARK(BM_SoftmaxProbs)->Arg(6)->Arg(64);

void BM_GradLogProb(benchmark::State& state) {
  const auto theta = random_theta(static_cast<int>(state.range(0)), 43);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::policy::grad_log_prob(theta, 1));
  }
}
BENCHMARK(BM_GradLogProb)->Arg(6)->Arg(64);

void BM_PolicySample(benchmark::State& state) {
  const auto theta = random_theta(6, 44);
  std::mt19937_64 rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::policy::sample(theta, rng));
  }
}
BENCHMARK(BM_PolicySample);

void BM_CacheKey(benchmark::State& state) {
  const std::vector<dpg::Message> messages{
      {dpg::Role::System, "You are a careful assistant."},
      {dpg::Role::User, std::string(static_cast<std::size_t>(state.range(0)), 'q')}};
  const dpg::SamplingParams params;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::cache_key("http://localhost:8080", "mock-model",
                                            messages, params));
  }
}
BENCHMARK(BM_CacheKey)->Arg(256)->Arg(4096);

void BM_Sha256Hex(benchmark::State& state) {
  const std::string payload(static_cast<std::size_t>(state.range(0)), 'x');
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::sha256_hex(payload));
  }
}
BENCHMARK(BM_Sha256Hex)->Arg(1024)->Arg(65536);

void BM_RenderIclQuery(benchmark::State& state) {
  const dpg::PromptRecord x{"b-1", "Why do rivers meander across flat plains", "bench", {}};
  const dpg::DerivedPrompt derived{"b-1",
                                   "Explain the physical processes that cause rivers to "
                                   "develop meanders on low-gradient terrain",
                                   2, dpg::Producer::RemoteModel};
  const std::string response(512, 'r');
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::gen::build_icl_query(x, derived, response));
  }
}
BENCHMARK(BM_RenderIclQuery);

void BM_AssembleDerivationRequest(benchmark::State& state) {
  const dpg::gen::DpgTemplate tmpl;
  const dpg::PromptRecord x{"b-2", "How does yeast make bread rise", "bench", {}};
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::gen::assemble_derivation_request(tmpl, x));
  }
}
BENCHMARK(BM_AssembleDerivationRequest);

void BM_ParseVerdict(benchmark::State& state) {
  const std::string raw =
      "Assistant A gives a clearer and more complete account of the mechanism, while "
      "Assistant B is terse and skips the causal chain. Verdict: [[A]]";
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::judge::parse_verdict(raw));
  }
}
BENCHMARK(BM_ParseVerdict);

void BM_Tally(benchmark::State& state) {
  std::vector<dpg::JudgeOutcome> outcomes;
  outcomes.reserve(static_cast<std::size_t>(state.range(0)));
  for (int i = 0; i < state.range(0); ++i) {
    outcomes.push_back(i % 5 == 0   ? dpg::JudgeOutcome::Tie
                       : i % 3 == 0 ? dpg::JudgeOutcome::B
                                    : dpg::JudgeOutcome::A);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::tally(outcomes));
  }
}
BENCHMARK(BM_Tally)->Arg(1000);

void BM_HeuristicScore(benchmark::State& state) {
  const dpg::reward::HeuristicWeights weights;
  const std::string prompt = "Why do rivers meander across flat plains over long spans";
  std::string response;
  for (int i = 0; i < 120; ++i) response += "rivers meander because sediment and flow interact ";
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpg::reward::heuristic_score(weights, prompt, response));
  }
}
BENCHMARK(BM_HeuristicScore);

}  // namespace

BENCHMARK_MAIN();
