#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include <sdeassim/config.hpp>

using namespace sdeassim;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& contents) {
        path = "config_test_tmp.ini";
        std::ofstream f(path, std::ios::binary);
        f << contents;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("file parsing with globals and sections", "[config]") {
    const TempFile file(
        "# top comment\n"
        "seed = 99\n"
        "T=2.0\n"
        "\n"
        "[weak-error]\n"
        "T = 4.0\n"
        "h=1e-3, 5e-3 ,1e-2\n"
        "[robustness]\n"
        "M=50\n");

    const auto cfg = ExperimentConfig::from_file(file.path, "weak-error");
    CHECK(cfg.get_int("seed", 0) == 99);
    CHECK(cfg.get_double("T", 0.0) == 4.0);  // section overrides the global
    const auto h = cfg.get_double_list("h", {});
    REQUIRE(h.size() == 3);
    CHECK(h[0] == 1e-3);
    CHECK(h[1] == 5e-3);
    CHECK(h[2] == 1e-2);
    CHECK_FALSE(cfg.has("M"));  // other sections are invisible

    const auto rob = ExperimentConfig::from_file(file.path, "robustness");
    CHECK(rob.get_int("M", 0) == 50);
    CHECK(rob.get_double("T", 0.0) == 2.0);  // global applies

    CHECK_THROWS_AS(ExperimentConfig::from_file("does_not_exist.ini", "x"), ConfigError);
}

TEST_CASE("malformed lines are rejected with the line number", "[config]") {
    const TempFile file("valid=1\nnot a pair\n");
    try {
        ExperimentConfig::from_file(file.path, "s");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("typed getters and defaults", "[config]") {
    ExperimentConfig cfg;
    cfg.set("a", "2.5");
    cfg.set("b", "7");
    cfg.set("c", "on");
    cfg.set("d", "off");
    cfg.set("names", "em,spc");
    cfg.set("bad", "2.5x");

    CHECK(cfg.get_double("a", 0.0) == 2.5);
    CHECK(cfg.get_int("b", 0) == 7);
    CHECK(cfg.get_bool("c", false));
    CHECK_FALSE(cfg.get_bool("d", true));
    CHECK(cfg.get_bool("missing", true));
    CHECK(cfg.get_double("missing", -1.5) == -1.5);
    CHECK(cfg.get_string("missing", "x") == "x");
    const auto names = cfg.get_string_list("names", {});
    REQUIRE(names.size() == 2);
    CHECK(names[0] == "em");
    CHECK(names[1] == "spc");

    CHECK_THROWS_AS(cfg.get_double("bad", 0.0), ConfigError);
    CHECK_THROWS_AS(cfg.get_int("a", 0), ConfigError);
    cfg.set("flag", "maybe");
    CHECK_THROWS_AS(cfg.get_bool("flag", false), ConfigError);
}

TEST_CASE("overrides and unknown-key rejection", "[config]") {
    ExperimentConfig cfg;
    cfg.set("h", "0.1");
    cfg.apply_override("h=0.2");
    cfg.apply_override("extra = 3 ");
    CHECK(cfg.get_double("h", 0.0) == 0.2);
    CHECK(cfg.get_int("extra", 0) == 3);
    CHECK_THROWS_AS(cfg.apply_override("novalue"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("=5"), ConfigError);

    CHECK_THROWS_AS(cfg.ensure_known({"h"}), ConfigError);
    cfg.ensure_known({"h", "extra"});  // no throw

    CHECK(cfg.entries().size() == 2);
}
