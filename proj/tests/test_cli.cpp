#include "msgm/io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

const char* kTiny = R"([experiment]
name = tiny
seed = 11

[sde]
kind = VE
sigma_min = 0.01
sigma_max = 50

[net]
widths = 16, 16
n_freq = 8

[data]
n_retain = 400
n_forget = 100
n_test = 10

[train]
mode = Ort
steps = 40
batch_size = 32
learning_rate = 0.001

[sampler]
n_samples = 200
n_steps = 20

[likelihood]
rtol = 1e-3
atol = 1e-3

[inpaint]
observed_dims = 0
values = 0
n_samples = 50
n_steps = 20

[reconstruct]
n_steps = 10

[eval]
resolution = 5
)";

class Cli : public ::testing::Test {
protected:
    fs::path dir = fs::temp_directory_path() / "msgm_cli_test";

    void SetUp() override {
        fs::remove_all(dir);
        fs::create_directories(dir);
        write("tiny.ini", kTiny);
    }
    void TearDown() override { fs::remove_all(dir); }

    void write(const std::string& name, const std::string& text) { std::ofstream(dir / name) << text; }

    int run(const std::string& args, const std::string& tag = "run") {
        const std::string cmd = std::string(MSGM_CLI_PATH) + " " + args + " > " + (dir / (tag + ".out")).string() +
                                " 2> " + (dir / (tag + ".err")).string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string cfg(const std::string& name = "tiny.ini") const { return "--config " + (dir / name).string(); }
    std::string out(const std::string& sub) const { return "--out " + (dir / sub).string(); }
    std::string err(const std::string& tag = "run") const { return msgm::read_text(dir / (tag + ".err")); }
};

} // namespace

TEST_F(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run("train --config " + (dir / "missing.ini").string()), 1);
}

TEST_F(Cli, FullPipelineWritesArtifacts) {
    ASSERT_EQ(run("train " + cfg() + " " + out("a")), 0) << err();
    for (const char* f : {"tiny.ckpt", "tiny_loss.csv", "tiny_loss.svg"}) EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(run("eval " + cfg() + " " + out("a")), 0) << err();
    for (const char* f : {"tiny_samples.csv", "tiny_samples.svg", "tiny_nll.csv", "tiny_nll_summary.csv",
                          "tiny_field.csv", "tiny_field.svg", "tiny_results.csv"}) {
        EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    }
    const msgm::CsvTable r = msgm::read_csv(dir / "a" / "tiny_results.csv");
    EXPECT_EQ(r.header, (std::vector<std::string>{"method", "UR", "NLL_Dg", "NLL_Df"}));
    EXPECT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(run("inpaint " + cfg() + " " + out("a")), 0) << err();
    EXPECT_EQ(run("reconstruct " + cfg() + " " + out("a")), 0) << err();
    EXPECT_TRUE(fs::exists(dir / "a" / "tiny_inpaint.csv"));
    EXPECT_TRUE(fs::exists(dir / "a" / "tiny_reconstruct.csv"));
    const msgm::CsvTable pts = msgm::read_csv(dir / "a" / "tiny_inpaint.csv");
    for (double v : pts.numbers("x0")) EXPECT_EQ(v, 0.0);
}

TEST_F(Cli, RunsAreByteIdenticalUnderOneSeed) {
    ASSERT_EQ(run("train " + cfg() + " " + out("a")), 0) << err();
    ASSERT_EQ(run("train " + cfg() + " " + out("b")), 0) << err();
    ASSERT_EQ(run("sample " + cfg() + " " + out("a")), 0) << err();
    ASSERT_EQ(run("sample " + cfg() + " " + out("b")), 0) << err();
    for (const char* f : {"tiny.ckpt", "tiny_loss.csv", "tiny_samples.csv"}) {
        EXPECT_EQ(msgm::read_text(dir / "a" / f), msgm::read_text(dir / "b" / f)) << f;
    }
    ASSERT_EQ(run("train " + cfg() + " " + out("c") + " --seed 12"), 0) << err();
    EXPECT_NE(msgm::read_text(dir / "a" / "tiny.ckpt"), msgm::read_text(dir / "c" / "tiny.ckpt"));
}

TEST_F(Cli, CorruptedCheckpointRejected) {
    ASSERT_EQ(run("train " + cfg() + " " + out("a")), 0) << err();
    std::string bytes = msgm::read_text(dir / "a" / "tiny.ckpt");
    bytes[bytes.size() / 2] ^= 0x10;
    write("bad.ckpt", bytes);
    EXPECT_EQ(run("sample " + cfg() + " " + out("a") + " --checkpoint " + (dir / "bad.ckpt").string()), 1);
    EXPECT_NE(err().find("CRC"), std::string::npos) << err();
}

TEST_F(Cli, ArchitectureMismatchRejected) {
    ASSERT_EQ(run("train " + cfg() + " " + out("a")), 0) << err();
    std::string text = kTiny;
    text.replace(text.find("widths = 16, 16"), 15, "widths = 8, 8");
    write("narrow.ini", text);
    EXPECT_EQ(run("sample " + cfg("narrow.ini") + " " + out("a") + " --checkpoint " + (dir / "a" / "tiny.ckpt").string()),
              1);
    EXPECT_NE(err().find("architecture"), std::string::npos) << err();
}

TEST_F(Cli, InvalidConfigListsProblems) {
    std::string text = kTiny;
    text.replace(text.find("sigma_max = 50"), 14, "");
    write("broken.ini", text + "\n[extra]\nkey = 1\n");
    EXPECT_EQ(run("train " + cfg("broken.ini") + " " + out("a")), 1);
    EXPECT_NE(err().find("sde.sigma_max"), std::string::npos) << err();
    EXPECT_NE(err().find("extra: unknown section"), std::string::npos) << err();
}

TEST_F(Cli, DivergenceExitsWithNumericalCode) {
    std::string text = kTiny;
    text.replace(text.find("learning_rate = 0.001"), 21, "learning_rate = 1000");
    write("blowup.ini", text);
    EXPECT_EQ(run("train " + cfg("blowup.ini") + " " + out("a")), 2) << err();
    EXPECT_NE(err().find("numerical"), std::string::npos) << err();
}

TEST_F(Cli, AblationWritesAggregate) {
    write("sweep.ini", std::string(kTiny) + "\n[ablation]\nparam = interval\nvalues = 1, 2\n");
    ASSERT_EQ(run("ablate " + cfg("sweep.ini") + " " + out("s")), 0) << err();
    const msgm::CsvTable t = msgm::read_csv(dir / "s" / "tiny_ablation.csv");
    EXPECT_EQ(t.header[0], "interval");
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0][5], "ok");
    EXPECT_TRUE(fs::exists(dir / "s" / "tiny_interval_1_results.csv"));
}
