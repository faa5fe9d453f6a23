#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("sim2real_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args) {
    const std::string cmd = std::string(SIM2REAL_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json manifest(const fs::path& dir) {
    std::ifstream in(dir / "run_manifest.json");
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("datagen --n-source") == 2);
    CHECK(run("datagen --size 70") == 2);
    CHECK(run("train") == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("validation errors exit with 1 and still record a manifest") {
    const fs::path dir = scratch("invalid");
    CHECK(run("train --data " + (dir / "missing").string() + " --out " + (dir / "t").string()) == 1);
    CHECK(run("datagen --n-source -3 --out " + (dir / "d").string()) == 1);
    const auto m = manifest(dir / "d");
    CHECK(m.at("status") == "failed");
    CHECK(m.at("subcommand") == "datagen");
}

TEST_CASE("verify-bounds passes on every instance") {
    const fs::path dir = scratch("bounds");
    REQUIRE(run("verify-bounds --instances 1000 --seed 1 --out " + dir.string()) == 0);
    std::istringstream table(slurp(dir / "bounds.tsv"));
    std::string line;
    std::getline(table, line);
    CHECK(line.rfind("instance\t", 0) == 0);
    int rows = 0;
    int passed = 0;
    while (std::getline(table, line)) {
        ++rows;
        passed += line.substr(line.rfind('\t') + 1) == "true" ? 1 : 0;
    }
    CHECK(rows == 1000);
    CHECK(passed == 1000);
    CHECK(manifest(dir).at("status") == "ok");
}

TEST_CASE("datagen, train, transfer and evaluate chain together") {
    const fs::path dir = scratch("pipeline");
    const fs::path data = dir / "data";
    REQUIRE(run("datagen --n-source 12 --n-target 12 --seed 4 --out " + data.string()) == 0);
    CHECK(fs::exists(data / "manifest.tsv"));
    CHECK(slurp(data / "manifest.tsv").rfind("file\tangular_velocity\tcommand\tdomain\n", 0) == 0);
    CHECK(manifest(data).at("status") == "ok");

    const fs::path model = dir / "train";
    REQUIRE(run("train --data " + data.string() +
                " --set steps=4 --set batch_size=2 --set width_divisor=16 --set classifier_width_divisor=16"
                " --set snapshot_every=2 --out " + model.string()) == 0);
    CHECK(fs::exists(model / "model.ckpt"));
    CHECK(fs::exists(model / "metrics.tsv"));
    const auto m = manifest(model);
    CHECK(m.at("config").at("steps") == 4);
    CHECK(m.at("config").at("batch_size") == 2);

    CHECK(run("train --data " + data.string() + " --set nonsense=1 --out " + (dir / "bad").string()) == 1);

    const fs::path moved = dir / "transfer";
    REQUIRE(run("transfer --ckpt " + (model / "model.ckpt").string() + " --in " + data.string() +
                " --limit 3 --grid --out " + moved.string()) == 0);
    CHECK(fs::exists(moved / "grid.png"));
    CHECK(fs::exists(moved / "run_manifest.json"));

    const fs::path report = dir / "eval" / "target.tsv";
    REQUIRE(run("evaluate --ckpt " + (model / "model.ckpt").string() + " --data " + data.string() +
                " --domain target --out " + report.string()) == 0);
    CHECK(fs::exists(report));
    CHECK(fs::exists(report.parent_path() / "run_manifest.json"));
}

TEST_CASE("output root defaults from the environment") {
    const fs::path root = scratch("envroot");
    ::setenv("SIM2REAL_OUT_ROOT", root.c_str(), 1);
    REQUIRE(run("verify-bounds --instances 5") == 0);
    ::unsetenv("SIM2REAL_OUT_ROOT");
    CHECK(fs::exists(root / "verify-bounds" / "bounds.tsv"));
    CHECK(fs::exists(root / "verify-bounds" / "run_manifest.json"));
}
