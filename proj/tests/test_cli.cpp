#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <fmt/format.h>

#include "babyit/manifest.hpp"
#include "babyit/pipeline.hpp"
#include "golden.hpp"

using namespace babyit;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const fs::path& dir, const std::string& args) {
    const auto log = dir / "cli_output.txt";
    const auto cmd = fmt::format("\"{}\" {} > \"{}\" 2>&1", BABYIT_CLI, args, log.string());
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

fs::path fresh(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("babyit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string drop_first_line(const std::string& s) { return s.substr(s.find('\n') + 1); }

// A small fixture tree, built once.
const fs::path& small_manifest() {
    static const fs::path path = [] {
        const auto dir = fresh("cli_small");
        return pipeline::write_fixture_manifest(dir, 5, true);
    }();
    return path;
}

}  // namespace

TEST_CASE("manifest validation collects every problem") {
    auto j = load_manifest(small_manifest()).to_json(small_manifest().parent_path());
    j["corpus"]["split_fraction"] = 1.5;
    j["augment"]["backend"] = "carrier-pigeon";
    j["model"]["num_heads"] = 3;
    j["corpus"]["dialogues"] = "nowhere.jsonl";
    j["bogus"] = 1;
    try {
        parse_manifest(j, small_manifest().parent_path());
        FAIL("expected ManifestError");
    } catch (const ManifestError& e) {
        const std::string all = join(e.diagnostics, "\n");
        CHECK(e.diagnostics.size() >= 5);
        CHECK(all.find("corpus.split_fraction") != std::string::npos);
        CHECK(all.find("augment.backend") != std::string::npos);
        CHECK(all.find("num_heads") != std::string::npos);
        CHECK(all.find("corpus.dialogues") != std::string::npos);
        CHECK(all.find("bogus") != std::string::npos);
    }
}

TEST_CASE("manifest JSON round trip keeps the hash") {
    const auto m = load_manifest(small_manifest());
    const auto back = parse_manifest(m.to_json(small_manifest().parent_path()), small_manifest().parent_path());
    CHECK(back.hash() == m.hash());
    auto other = m;
    other.seed += 1;
    CHECK(other.hash() != m.hash());
    other = m;
    other.out_dir = "/somewhere/else";
    CHECK(other.hash() == m.hash());
}

TEST_CASE("exit codes") {
    const auto dir = fresh("cli_codes");
    CHECK(cli(dir, "--help").code == 0);
    CHECK(cli(dir, "no-such-command").code == 2);
    CHECK(cli(dir, "validate --manifest " + small_manifest().string()).code == 0);

    const auto r = cli(dir, fmt::format("instruct-tune --manifest {} --strategy alphabetical", small_manifest().string()));
    CHECK(r.code == 2);
    CHECK(r.out.find("alphabetical") != std::string::npos);

    write_file(dir / "bad.json", R"({"seed": 1, "out_dir": "x", "corpus": {"split_fraction": 2}})");
    const auto bad = cli(dir, "validate --manifest " + (dir / "bad.json").string());
    CHECK(bad.code == 2);
    CHECK(bad.out.find("invalid manifest") != std::string::npos);
    CHECK(bad.out.find("corpus.split_fraction") != std::string::npos);

    write_file(dir / "broken.json", "{ not json");
    CHECK(cli(dir, "validate --manifest " + (dir / "broken.json").string()).code == 2);

    CHECK(cli(dir, "report --manifest " + small_manifest().string() + " --results " + (dir / "missing.csv").string()).code == 2);
}

TEST_CASE("report from a results file matches the numpy reference") {
    const auto dir = fresh("cli_report");
    const auto r = cli(dir, fmt::format("report --manifest {} --out-dir {} --results {}", small_manifest().string(), dir.string(),
                                        golden::path("report_results.csv").string()));
    REQUIRE(r.code == 0);
    const auto z = read_file(dir / "report" / "zscores.csv");
    CHECK(z.starts_with("# provenance: {"));
    const auto expected = read_file(golden::path("report_zscores.csv"));
    std::istringstream a(drop_first_line(z)), e(expected);
    std::string la, le;
    std::size_t lines = 0;
    while (std::getline(e, le)) {
        REQUIRE(std::getline(a, la));
        if (lines++ == 0) {
            CHECK(la == le);
            continue;
        }
        CHECK(la.substr(0, la.rfind(',')) == le.substr(0, le.rfind(',')));
        CHECK(std::stod(la.substr(la.rfind(',') + 1)) == doctest::Approx(std::stod(le.substr(le.rfind(',') + 1))).epsilon(1e-9));
    }
    CHECK_FALSE(std::getline(a, la));
    const auto svg = read_file(dir / "report" / "box_plot.svg");
    CHECK(svg.find("<!-- provenance: ") != std::string::npos);
    CHECK(r.out.find("flat") != std::string::npos);
}

TEST_CASE("single-strategy instruction tuning and provenance on every artifact") {
    const auto dir = fresh("cli_stages");
    const auto m = small_manifest().string();
    const auto out = dir.string();
    for (const char* stage : {"build-corpus", "augment", "train-tokenizer", "pretrain"}) {
        CAPTURE(stage);
        const std::string extra = std::string(stage) == "augment" ? " --stub" : "";
        REQUIRE(cli(dir, fmt::format("{} --manifest {} --out-dir {}{}", stage, m, out, extra)).code == 0);
    }
    REQUIRE(cli(dir, fmt::format("instruct-tune --manifest {} --out-dir {} --strategy seq-switch-wiki", m, out)).code == 0);
    const auto plan = Json::parse(read_file(dir / "instruct" / "it_switch_wiki_plan.json"));
    REQUIRE(plan["phases"].size() == 2);
    CHECK(plan["phases"][0]["dataset_ref"] == "switchboard");
    CHECK(plan["phases"][1]["dataset_ref"] == "simplewiki");
    CHECK(fs::exists(dir / "checkpoints" / "it_switch_wiki.ckpt"));
    CHECK_FALSE(fs::exists(dir / "checkpoints" / "it_merged.ckpt"));
    CHECK(fs::exists(dir / "provenance" / "instruct-tune-seq-switch-wiki.json"));

    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().filename() == "cli_output.txt") {
            continue;
        }
        CAPTURE(entry.path().string());
        const auto ext = entry.path().extension().string();
        const auto body = read_file(entry.path());
        if (ext == ".csv") {
            CHECK(body.starts_with("# provenance: {"));
        } else if (ext == ".jsonl") {
            CHECK((body.empty() || body.starts_with("{\"_provenance\":")));
        } else if (entry.path().parent_path().filename() == "provenance") {
            const auto j = Json::parse(body);
            CHECK(j.contains("manifest_hash"));
            CHECK(j["artifacts"].is_object());
        } else if (ext == ".json") {
            const auto j = Json::parse(body);
            CHECK(j.contains("provenance"));
            CHECK(j["provenance"].contains("manifest_hash"));
        } else if (ext == ".svg") {
            CHECK(body.find("provenance") != std::string::npos);
        } else if (ext == ".ckpt") {
            CHECK(body.find("manifest_hash") != std::string::npos);
        } else {
            FAIL_CHECK("unexpected artifact type");
        }
    }
}

TEST_CASE("two small end-to-end runs are byte-identical") {
    const auto a = fresh("cli_e2e_a"), b = fresh("cli_e2e_b");
    REQUIRE(cli(a, fmt::format("run --manifest {} --out-dir {} --stub", small_manifest().string(), (a / "run").string())).code == 0);
    REQUIRE(cli(b, fmt::format("run --manifest {} --out-dir {} --stub", small_manifest().string(), (b / "run").string())).code == 0);
    const auto ha = pipeline::artifact_hashes(a / "run"), hb = pipeline::artifact_hashes(b / "run");
    CHECK(ha.size() > 20);
    CHECK(ha == hb);
    for (const char* f : {"eval/results.csv", "eval/finetune.csv", "report/zscores.csv", "report/box_plot.svg", "checkpoints/it_merged.ckpt"}) {
        CHECK(ha.count(f) == 1);
    }
}
