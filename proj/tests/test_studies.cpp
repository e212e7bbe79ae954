#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include <sdeassim/studies.hpp>

using namespace sdeassim;

namespace {

ExperimentConfig base_cfg(std::int64_t workers) {
    ExperimentConfig cfg;
    cfg.set("seed", "4242");
    cfg.set("workers", std::to_string(workers));
    return cfg;
}

int count_metric(const StudyResult& r, const std::string& name) {
    int n = 0;
    for (const auto& row : r.rows) n += row.metric == name ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("filter names round-trip", "[studies]") {
    for (const auto k : {FilterKind::EnkfEuler, FilterKind::EnkfSeq, FilterKind::SenkfSeq,
                         FilterKind::SenkfEm})
        CHECK(parse_filter_name(filter_name(k)) == k);
    CHECK_THROWS_AS(parse_filter_name("enkf"), ConfigError);
}

TEST_CASE("observation events align with the coarse grid", "[studies]") {
    detail::TruthPackage p;
    p.ok = true;
    p.truth.resize(4, 3);
    p.truth << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    p.ops = {ObservationOperator{{0, 2}}, ObservationOperator{{1, 3}},
             ObservationOperator{{0, 3}}};
    p.obs_noise.resize(2, 3);
    p.obs_noise << 0.5, -0.5, 1.0, 2.0, 0.0, -1.0;

    const auto events = detail::build_events(p, 0.5, 10);
    REQUIRE(events.size() == 3);
    CHECK(events[0].step == 10);
    CHECK(events[1].step == 20);
    CHECK(events[2].step == 30);
    // y = truth at the observed coordinates plus sigma_y * standardized noise
    CHECK(events[0].y[0] == 1.0 + 0.5 * 0.5);
    CHECK(events[0].y[1] == 7.0 + 0.5 * 2.0);
    CHECK(events[1].y[0] == 5.0 + 0.5 * -0.5);
    CHECK(events[1].y[1] == 11.0 + 0.5 * 0.0);
    CHECK(events[2].y[0] == 3.0 + 0.5 * 1.0);
    CHECK(events[2].y[1] == 12.0 + 0.5 * -1.0);
}

TEST_CASE("order check produces identical bytes for any worker count", "[studies]") {
    auto make = [](std::int64_t workers) {
        auto cfg = base_cfg(workers);
        cfg.set("d_x", "1");
        cfg.set("J", "300");
        cfg.set("T", "0.4");
        cfg.set("h", "0.2,0.1,0.05");
        return run_order_check(cfg);
    };
    const auto one = make(1);
    const auto three = make(3);
    CHECK(rows_to_csv(one.rows) == rows_to_csv(three.rows));
    CHECK(one.summary.dump() == three.summary.dump());

    // slopes are reported for both schemes and both functionals
    CHECK(count_metric(one, "order_slope_x") == 2);
    CHECK(count_metric(one, "order_slope_x2") == 2);
    for (const auto& row : one.rows)
        if (row.metric == "order_slope_x" || row.metric == "order_slope_x2")
            CHECK(std::isfinite(row.value));
}

TEST_CASE("weak error study structure and determinism", "[studies]") {
    auto make = [](std::int64_t workers) {
        auto cfg = base_cfg(workers);
        cfg.set("d_x", "8");
        cfg.set("sigma", "0.5");
        cfg.set("h", "0.02");
        cfg.set("h_o", "2e-3");
        cfg.set("T", "0.2");
        cfg.set("J", "6");
        cfg.set("check", "on");
        return run_weak_error_study(cfg);
    };
    const auto a = make(1);
    const auto b = make(4);
    CHECK(rows_to_csv(a.rows) == rows_to_csv(b.rows));
    CHECK(a.summary.dump() == b.summary.dump());

    CHECK(count_metric(a, "completion_pct") == 3);  // em, spc, reference
    CHECK(count_metric(a, "weak_error") == 2);
    for (const auto& row : a.rows) {
        if (row.metric == "completion_pct") CHECK(row.value == 100.0);
        if (row.metric == "weak_error") {
            CHECK(std::isfinite(row.value));
            CHECK(row.value >= 0.0);
        }
        if (row.metric == "status") CHECK(row.seconds == 0.0);  // timing off by default
    }
    CHECK(a.check_ok);
}

TEST_CASE("robustness study structure and determinism", "[studies]") {
    auto make = [](std::int64_t workers) {
        auto cfg = base_cfg(workers);
        cfg.set("d_x", "8");
        cfg.set("d_y", "4");
        cfg.set("sigma2", "0.25");
        cfg.set("sigma_y2", "0.25");
        cfg.set("h", "0.02");
        cfg.set("delta", "0.1");
        cfg.set("T", "0.4");
        cfg.set("M", "8");
        cfg.set("replicates", "2");
        cfg.set("h_o", "2e-3");
        return run_robustness_study(cfg);
    };
    const auto a = make(1);
    const auto b = make(2);
    CHECK(rows_to_csv(a.rows) == rows_to_csv(b.rows));
    CHECK(a.summary.dump() == b.summary.dump());

    CHECK(count_metric(a, "completion_pct") == 4);  // one cell per filter
    int status_rows = 0;
    for (const auto& row : a.rows) {
        if (row.metric != "status") continue;
        ++status_rows;
        CHECK(row.status == "completed");
        if (row.filter == "enkf-seq" || row.filter == "senkf-seq") CHECK(row.scheme == "spc");
        if (row.filter == "enkf-euler" || row.filter == "senkf-em") CHECK(row.scheme == "em");
    }
    CHECK(status_rows == 8);  // 4 filters x 2 replicates
}

TEST_CASE("robustness honors the filter subset", "[studies]") {
    auto cfg = base_cfg(1);
    cfg.set("d_x", "8");
    cfg.set("d_y", "4");
    cfg.set("sigma2", "0.25");
    cfg.set("sigma_y2", "0.25");
    cfg.set("h", "0.02");
    cfg.set("delta", "0.1");
    cfg.set("T", "0.2");
    cfg.set("M", "6");
    cfg.set("replicates", "1");
    cfg.set("h_o", "2e-3");
    cfg.set("filters", "senkf-seq");
    const auto r = run_robustness_study(cfg);
    for (const auto& row : r.rows) CHECK(row.filter == "senkf-seq");
    CHECK(count_metric(r, "completion_pct") == 1);
}

TEST_CASE("filter benchmark structure and determinism", "[studies]") {
    auto make = [](std::int64_t workers) {
        auto cfg = base_cfg(workers);
        cfg.set("d_x", "8");
        cfg.set("d_y", "4");
        cfg.set("sigma2", "0.25");
        cfg.set("sigma_y2", "0.25");
        cfg.set("h_euler", "0.01");
        cfg.set("h_seq", "0.02");
        cfg.set("M", "6,8");
        cfg.set("T", "0.4");
        cfg.set("delta", "0.1");
        cfg.set("replicates", "2");
        cfg.set("h_o", "2e-3");
        return run_filter_bench(cfg);
    };
    const auto a = make(1);
    const auto b = make(3);
    CHECK(rows_to_csv(a.rows) == rows_to_csv(b.rows));

    CHECK(count_metric(a, "completion_pct") == 8);  // 4 filters x 2 ensemble sizes
    CHECK(count_metric(a, "nmse_mean") == 8);
    for (const auto& row : a.rows) {
        if (row.metric == "nmse" || row.metric == "nmse_mean") {
            CHECK(std::isfinite(row.value));
            CHECK(row.value > 0.0);
        }
        if (row.filter == "enkf-seq" || row.filter == "senkf-seq") {
            CHECK(row.h == 0.02);
        } else if (!row.filter.empty()) {
            CHECK(row.h == 0.01);
        }
        if (row.metric == "nmse_mean") CHECK((row.m_ens == 6 || row.m_ens == 8));
    }
}

TEST_CASE("configuration validation fails loudly", "[studies]") {
    auto bad = base_cfg(1);
    bad.set("bogus_key", "1");
    CHECK_THROWS_AS(run_order_check(bad), ConfigError);

    auto misaligned = base_cfg(1);
    misaligned.set("T", "0.35");
    misaligned.set("h", "0.2,0.1,0.05");
    misaligned.set("d_x", "1");
    misaligned.set("J", "10");
    CHECK_THROWS_AS(run_order_check(misaligned), ConfigError);

    auto badfilter = base_cfg(1);
    badfilter.set("filters", "enkf");
    CHECK_THROWS_AS(run_robustness_study(badfilter), ConfigError);

    auto badscheme = base_cfg(1);
    badscheme.set("scheme", "rk4");
    CHECK_THROWS_AS(run_order_check(badscheme), ConfigError);
}

TEST_CASE("single trajectory simulation", "[studies]") {
    auto cfg = base_cfg(1);
    cfg.set("model", "ou");
    cfg.set("scheme", "em");
    cfg.set("d_x", "2");
    cfg.set("x0", "1.5");
    cfg.set("h", "0.1");
    cfg.set("T", "0.5");
    cfg.set("sample_stride", "2");
    const auto sim = run_simulate(cfg);
    CHECK(sim.status == RunStatus::Completed);
    REQUIRE(sim.steps.size() == 3);  // initial state plus steps 2 and 4
    CHECK(sim.steps[0] == 0);
    CHECK(sim.steps[1] == 2);
    CHECK(sim.steps[2] == 4);
    REQUIRE(sim.states.cols() == 3);
    CHECK(sim.states(0, 0) == 1.5);
    CHECK(sim.states(1, 0) == 1.5);

    const auto again = run_simulate(cfg);
    CHECK((sim.states - again.states).norm() == 0.0);

    const std::string path = "sim_test_tmp.csv";
    write_trajectory_csv(path, sim);
    std::ifstream f(path);
    REQUIRE(f.good());
    std::string header;
    std::getline(f, header);
    CHECK(header == "step,t,x0,x1");
    int lines = 0;
    std::string line;
    while (std::getline(f, line)) ++lines;
    CHECK(lines == 3);
    f.close();
    std::remove(path.c_str());

    auto bad = cfg;
    bad.set("scheme", "heun");
    CHECK_THROWS_AS(run_simulate(bad), ConfigError);
    auto badmodel = cfg;
    badmodel.set("model", "heat");
    CHECK_THROWS_AS(run_simulate(badmodel), ConfigError);
}
