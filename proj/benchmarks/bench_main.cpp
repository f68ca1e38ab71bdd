#include <benchmark/benchmark.h>

#include "perfsim/agents.hpp"
#include "perfsim/harness.hpp"
#include "perfsim/solver.hpp"

using namespace perfsim;

namespace {

void BM_PoolStep(benchmark::State& state) {
    const Dataset data = generate_synthetic(3, 200, 1);
    AgentPool pool(data.samples, Utility{UtilityKind::logistic, 0.01}, 0.005, static_cast<std::size_t>(state.range(0)));
    const ParamVector theta{0.05, 0.04, 0.03};
    RngStream rng(2);
    for (auto _ : state) benchmark::DoNotOptimize(pool_step(pool, theta, rng));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_PoolStep)->Arg(1)->Arg(5)->Arg(50);

void BM_GaussianArRun(benchmark::State& state) {
    const GaussianEnv env{10.0, 0.1, 50.0, 0.5};
    RunConfig cfg;
    cfg.theta0 = ParamVector{0.0};
    cfg.schedule = StepSchedule::inverse(500.0 / 0.9, 800.0 / 0.81);
    cfg.horizon = state.range(0);
    cfg.record_at = checkpoint_grid(cfg.horizon);
    for (auto _ : state) {
        GaussianArKernel kernel(env, env.z_bar);
        benchmark::DoNotOptimize(sa_run(LossModel::quadratic(), kernel, cfg, ParamVector{100.0 / 9.0}));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GaussianArRun)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_StrategicRun(benchmark::State& state) {
    const ExperimentSpec spec = parse_spec(R"({"preset": "strat_class_logistic"})");
    const ResolvedPoint pt = resolve_points(spec).front();
    RunConfig cfg;
    cfg.theta0 = pt.theta0;
    cfg.schedule = pt.schedule;
    cfg.horizon = state.range(0);
    cfg.record_at = checkpoint_grid(cfg.horizon);
    for (auto _ : state) {
        AdaptedPoolKernel kernel(AgentPool(pt.data->samples, pt.utility, pt.params.at("alpha"), 5));
        benchmark::DoNotOptimize(sa_run(pt.loss, kernel, cfg, pt.theta_ps));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_StrategicRun)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_LogisticBestResponse(benchmark::State& state) {
    const Dataset data = generate_synthetic(3, 200, 1);
    const Utility u{UtilityKind::logistic, 0.01};
    const ParamVector theta{0.5, -0.3, 0.8};
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(best_response_exact(u, data.samples[i], theta, {1e-10, 10000}));
        i = (i + 1) % data.size();
    }
}
BENCHMARK(BM_LogisticBestResponse);

void BM_PoolFixedPoint(benchmark::State& state) {
    const ExperimentSpec spec = parse_spec(R"({"preset": "strat_class_linear"})");
    for (auto _ : state) benchmark::DoNotOptimize(resolve_points(spec));
}
BENCHMARK(BM_PoolFixedPoint)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
