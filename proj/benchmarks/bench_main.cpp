#include <benchmark/benchmark.h>

#include <map>
#include <random>
#include <string>

#include "csr/exponent.hpp"
#include "csr/region.hpp"
#include "csr/simulator.hpp"

namespace {

using namespace csr;

const SourceProblem& fixture(const std::string& name) {
  static std::map<std::string, SourceProblem> cache;
  auto it = cache.find(name);
  if (it == cache.end())
    it = cache.emplace(name, load_problem_file(std::string(CSR_FIXTURE_DIR) + "/" + name + ".json"))
             .first;
  return it->second;
}

const char* kFixtures[] = {"k1_dsbs", "k2_side_info"};

void BM_BigOmega(benchmark::State& state) {
  const auto& p = fixture(kFixtures[state.range(0)]);
  const std::vector<std::size_t> ws(p.k(), 2);
  const TLayout layout(p, ws);
  std::vector<double> u(layout.cells(), 1.0 / static_cast<double>(layout.cells()));
  const auto q = make_free_joint(p, JointPmf(layout.axes(), u));
  Weights w;
  w.alpha.assign(p.k(), 0.5 / static_cast<double>(p.k()));
  w.beta = w.alpha;
  for (auto _ : state) benchmark::DoNotOptimize(big_omega(p, q, {0.4, 1.0, w}).value);
  state.SetLabel(kFixtures[state.range(0)]);
}
BENCHMARK(BM_BigOmega)->Arg(0)->Arg(1);

void BM_MinBigOmega(benchmark::State& state) {
  const auto& p = fixture(kFixtures[state.range(0)]);
  InnerOptions o;
  o.w_sizes.assign(p.k(), 2);
  o.multistarts = 2;
  Weights w;
  w.alpha.assign(p.k(), 0.5 / static_cast<double>(p.k()));
  w.beta = w.alpha;
  for (auto _ : state) benchmark::DoNotOptimize(min_big_omega(p, {0.4, 1.0, w}, o).value);
  state.SetLabel(kFixtures[state.range(0)]);
}
BENCHMARK(BM_MinBigOmega)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_HyperplaneValue(benchmark::State& state) {
  const auto& p = fixture(kFixtures[state.range(0)]);
  RegionOptions o;
  o.multistarts = 4;
  Weights w;
  w.alpha.assign(p.k(), 0.5 / static_cast<double>(p.k()));
  w.beta = w.alpha;
  for (auto _ : state) benchmark::DoNotOptimize(hyperplane_value(p, w, o).value);
  state.SetLabel(kFixtures[state.range(0)]);
}
BENCHMARK(BM_HyperplaneValue)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ExactPc(benchmark::State& state) {
  const auto& p = fixture("k2_side_info");
  RegionOptions o;
  o.w_sizes = {2, 2};
  o.multistarts = 2;
  const auto aux = hyperplane_value(p, {{0.25, 0.25}, {0.25, 0.25}}, o).argmin;
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto code = random_code(p, aux, n, {2, 2}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(exact_pc(p, code, {0.2, 0.2}).pc);
}
BENCHMARK(BM_ExactPc)->DenseRange(2, 6, 2)->Unit(benchmark::kMillisecond);

void BM_MonteCarlo(benchmark::State& state) {
  const auto& p = fixture("k2_side_info");
  RegionOptions o;
  o.w_sizes = {2, 2};
  o.multistarts = 2;
  const auto aux = hyperplane_value(p, {{0.25, 0.25}, {0.25, 0.25}}, o).argmin;
  const auto code = random_code(p, aux, 6, {4, 2}, 3);
  MonteCarloOptions mc;
  mc.samples = 100000;
  mc.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(mc_pc(p, code, {0.2, 0.2}, mc).pc);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(mc.samples));
}
BENCHMARK(BM_MonteCarlo)->Unit(benchmark::kMillisecond);

void BM_DpDecoder(benchmark::State& state) {
  const auto& p = fixture("k1_dsbs");
  RegionOptions o;
  o.w_sizes = {2};
  o.multistarts = 2;
  const auto aux = hyperplane_value(p, {{0.5}, {0.5}}, o).argmin;
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto code = random_code(p, aux, n, {4}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(dp_decoder(p, code, 0, 0.2).tables.size());
}
BENCHMARK(BM_DpDecoder)->DenseRange(2, 6, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
