#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "planattr_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Run planattr(const std::string& args, const std::string& env = "") {
    const auto err = workdir() / "stderr.txt";
    const std::string cmd = env + " \"" PLANATTR_CLI_PATH "\" " + args + " 2>\"" + err.string() + "\"";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
}

fs::path write(const std::string& name, const std::string& text) {
    const auto p = workdir() / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
}

fs::path first_instance() {
    const auto r = planattr("gen --blocks 3 --count 1 --min-optimal 2 --seed 5");
    REQUIRE(r.code == 0);
    return write("inst.json", r.out.substr(0, r.out.find('\n')));
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen writes one instance per line") {
    const auto r = planattr("gen --blocks 4 --count 3 --seed 2");
    CHECK(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        CHECK(nlohmann::json::parse(line).contains("blocks"));
        ++n;
    }
    CHECK(n == 3);
    CHECK(planattr("gen --blocks 4 --count 3 --seed 2").out == r.out);
}

TEST_CASE("solve then validate") {
    const auto inst = first_instance();
    const auto solved = planattr("solve --instance \"" + inst.string() + "\"");
    REQUIRE(solved.code == 0);
    const auto plan = write("plan.txt", solved.out);
    const auto ok = planattr("validate --instance \"" + inst.string() + "\" --plan \"" + plan.string() + "\"");
    CHECK(ok.code == 0);
    CHECK(nlohmann::json::parse(ok.out)["ok"] == true);
}

TEST_CASE("validate reports the failing step") {
    const auto inst = first_instance();
    const auto plan = write("bad.txt", "put down the red block\n");
    const auto r = planattr("validate --instance \"" + inst.string() + "\" --plan \"" + plan.string() + "\"");
    CHECK(r.code == 1);
    const auto diag = nlohmann::json::parse(r.err);
    CHECK(diag["error"] == "IllegalAction");
    CHECK(diag["failure_index"] == 1);
    CHECK(diag.contains("violation"));
}

TEST_CASE("usage errors exit 2") {
    CHECK(planattr("validate --plan x").code == 2);
    CHECK(planattr("no-such-command").code == 2);
}

TEST_CASE("attribution against an unreachable backend") {
    const auto inst = first_instance();
    const auto r = planattr("attribute --instance \"" + inst.string() + "\" --backend-url http://127.0.0.1:9");
    CHECK(r.code == 1);
    CHECK(nlohmann::json::parse(r.err)["error"] == "TransportError");

    const auto env = planattr("attribute --instance \"" + inst.string() + "\"", "PLANATTR_BACKEND_URL=http://127.0.0.1:9");
    CHECK(env.code == 1);
    CHECK(nlohmann::json::parse(env.err)["error"] == "TransportError");
}

TEST_CASE("attribution with the mock writes a matrix") {
    const auto inst = first_instance();
    const auto out = workdir() / "attr";
    const auto r = planattr("attribute --mock --instance \"" + inst.string() + "\" --out \"" + out.string() + "\"");
    CHECK(r.code == 0);
    CHECK(fs::exists(out / "matrix.csv"));
    CHECK(fs::exists(out / "matrix.norm.csv"));
    CHECK(slurp(out / "component_scores.csv").rfind("segment,label,score\n", 0) == 0);
}

}  // TEST_SUITE
