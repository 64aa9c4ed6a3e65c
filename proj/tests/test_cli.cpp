#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string g_binary;

int run(const std::string& args) {
    const int status = std::system((g_binary + " " + args + " >/dev/null 2>&1").c_str());
#ifdef _WIN32
    return status;
#else
    return WEXITSTATUS(status);
#endif
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

fs::path tmp(const std::string& name) {
    return fs::temp_directory_path() / ("phantom_cli_" + name);
}

} // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run("") == 1);
    CHECK(run("--bogus") == 1);
    CHECK(run("no-such-subcommand") == 1);
    CHECK(run("train") == 1);            // missing required --data
    CHECK(run("gen-data --count") == 1); // flag without value
}

TEST_CASE("help and version exit with 0") {
    CHECK(run("--help") == 0);
    CHECK(run("gen-data --help") == 0);
    CHECK(run("--version") == 0);
}

TEST_CASE("runtime failures exit with 2") {
    CHECK(run("train --data /nonexistent/dataset --epochs 1") == 2);
    CHECK(run("evaluate --detector /nonexistent.bin --data /also/nonexistent") == 2);
}

TEST_CASE("gen-data is deterministic across runs") {
    const fs::path a = tmp("ds_a"), b = tmp("ds_b");
    fs::remove_all(a);
    fs::remove_all(b);
    REQUIRE(run("gen-data --out " + a.string() + " --seed 7 --count 3 --image-size 48") == 0);
    REQUIRE(run("gen-data --out " + b.string() + " --seed 7 --count 3 --image-size 48") == 0);
    int files = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        const fs::path other = b / entry.path().filename();
        REQUIRE(fs::exists(other));
        CHECK(slurp(entry.path()) == slurp(other));
        ++files;
    }
    CHECK(files == 5); // 3 images + annotations + manifest
    // a different seed changes the pixels
    const fs::path c = tmp("ds_c");
    fs::remove_all(c);
    REQUIRE(run("gen-data --out " + c.string() + " --seed 8 --count 3 --image-size 48") == 0);
    CHECK(slurp(a / "000000.ppm") != slurp(c / "000000.ppm"));
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST_CASE("train/craft/evaluate produce their artifacts") {
    const fs::path ds = tmp("ds_flow");
    const fs::path detf = tmp("det.bin"), uap = tmp("uap.tnsr");
    const fs::path csv = tmp("eval.csv"), json = tmp("eval.json"), rep = tmp("rep.txt");
    fs::remove_all(ds);
    REQUIRE(run("gen-data --out " + ds.string() + " --seed 3 --count 4 --image-size 64") == 0);
    REQUIRE(run("train --data " + ds.string() + " --out " + detf.string() +
                " --epochs 2 --lr 0.05 --seed 2") == 0);
    CHECK(fs::exists(detf));
    REQUIRE(run("craft-uap --detector " + detf.string() + " --data " + ds.string() +
                " --out " + uap.string() + " --epochs 2 --epsilon 30 --ppm") == 0);
    CHECK(fs::exists(uap));
    CHECK(fs::exists(uap.string() + ".meta"));
    CHECK(fs::exists(uap.string() + ".ppm"));
    REQUIRE(run("evaluate --detector " + detf.string() + " --data " + ds.string() +
                " --uap " + uap.string() + " --iterations 3 --out-csv " + csv.string() +
                " --out-json " + json.string()) == 0);
    const std::string header = slurp(csv).substr(0, slurp(csv).find('\n'));
    CHECK(header == "image,variant,epsilon,alpha,candidates_to_nms,total_ms,nms_ms,recall");
    REQUIRE(run("report --json " + json.string() + " --out " + rep.string()) == 0);
    CHECK(slurp(rep).find("NMS slowdown") != std::string::npos);
    for (const auto& p : {detf, uap, csv, json, rep}) fs::remove(p);
    fs::remove(uap.string() + ".meta");
    fs::remove(uap.string() + ".ppm");
    fs::remove_all(ds);
}

TEST_CASE("output directory override applies to relative paths") {
    const fs::path outdir = tmp("outdir");
    fs::remove_all(outdir);
    fs::create_directories(outdir);
    const int status = std::system(("PHANTOMLAB_OUT_DIR=" + outdir.string() + " " +
                                    g_binary +
                                    " gen-data --out nested_ds --seed 1 --count 1 "
                                    "--image-size 32 >/dev/null 2>&1")
                                       .c_str());
    REQUIRE(WEXITSTATUS(status) == 0);
    CHECK(fs::exists(outdir / "nested_ds" / "manifest.txt"));
    fs::remove_all(outdir);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-phantomlab> [doctest args]\n");
        return 1;
    }
    g_binary = argv[1];
    doctest::Context ctx(argc - 1, argv + 1);
    return ctx.run();
}
