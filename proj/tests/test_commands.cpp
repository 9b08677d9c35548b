// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "aquila/commands.hpp"
#include "tiny_config.hpp"

using namespace aquila;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("aquila_cmd_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(AQUILA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Trains the tiny config through both stages once per test binary and returns the directory.
const fs::path& trained_dir() {
    static const fs::path dir = [] {
        const fs::path d = fresh_dir("trained");
        std::ofstream(d / "tiny.cfg") << render_config(tiny_run_config());
        const RunConfig cfg = tiny_run_config();
        std::ostringstream os;
        cmd_train(os, cfg, 1, std::nullopt, d / "s1");
        cmd_train(os, cfg, 2, d / "s1" / "stage1.ckpt", d / "s2");
        return d;
    }();
    return dir;
}

}  // namespace

TEST(Commands, Stage2WithoutResumeIsUsageError) {
    std::ostringstream os;
    EXPECT_THROW(cmd_train(os, tiny_run_config(), 2, std::nullopt, fresh_dir("s2")), UsageError);
    EXPECT_THROW(cmd_train(os, tiny_run_config(), 3, std::nullopt, fresh_dir("s3")), UsageError);
}

TEST(Commands, TrainWritesLogsAndCheckpoints) {
    const fs::path& d = trained_dir();
    for (const char* f : {"s1/stage1.ckpt", "s1/metrics_stage1.log", "s2/stage2.ckpt", "s2/metrics_stage2.log"}) {
        EXPECT_TRUE(fs::exists(d / f)) << f;
    }
    const std::string log = read_file(d / "s2" / "metrics_stage2.log");
    EXPECT_NE(log.find("# train.stage2.lr = "), std::string::npos);
    EXPECT_NE(log.find("\n0,2,0,"), std::string::npos);
    EXPECT_NE(log.find("# eval stage=2 when=end"), std::string::npos);
}

TEST(Commands, InspectListsEveryTensor) {
    std::ostringstream os;
    cmd_inspect(os, trained_dir() / "s2" / "stage2.ckpt");
    const Vocab vocab;
    const AquilaModel<float> m(model_config(tiny_run_config(), vocab), 1);
    const std::string out = os.str();
    for (const auto& p : m.store()) EXPECT_NE(out.find(p.name + " " + dims_str(p.value.dims()) + " f32"), std::string::npos) << p.name;
    EXPECT_NE(out.find(std::to_string(m.store().size()) + " tensors, " + std::to_string(m.store().scalar_count()) + " values"),
              std::string::npos);
}

TEST(Commands, SampleAndCaptionAreDeterministic) {
    const fs::path d = fresh_dir("sample");
    std::ostringstream os;
    cmd_sample(os, tiny_run_config(), d, 2);
    const std::string caps = read_file(d / "captions.txt");
    EXPECT_EQ(caps.substr(0, caps.find('\t')), "scene_0.img");
    std::ostringstream a, b;
    cmd_caption(a, tiny_run_config(), trained_dir() / "s2" / "stage2.ckpt", d / "scene_0.img");
    cmd_caption(b, tiny_run_config(), trained_dir() / "s2" / "stage2.ckpt", d / "scene_0.img");
    EXPECT_EQ(a.str(), b.str());
    RunConfig other = tiny_run_config();
    other.model.pyramid.resolution = 64;
    other.model.decoder.max_seq_len = 40;
    EXPECT_THROW(cmd_caption(a, other, trained_dir() / "s2" / "stage2.ckpt", d / "scene_0.img"), Error);
}

TEST(Commands, AblationTableFormat) {
    auto rows = ablation_variants();
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].result.exact_match = 0.1 * static_cast<double>(i);
        rows[i].result.final_val_loss = 1.0;
    }
    rows[1].result.exact_match = 0.35;
    rows[1].result.final_val_loss = 0.5;
    const std::string t = format_ablation(rows);
    EXPECT_NE(t.find("+SFI+MDA"), std::string::npos);
    EXPECT_NE(t.find("best by exact match (ties by loss): +MDA"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    const fs::path& d = trained_dir();
    const std::string cfg = (d / "tiny.cfg").string();
    EXPECT_EQ(run_cli("inspect --ckpt " + (d / "s2" / "stage2.ckpt").string()), 0);
    EXPECT_EQ(run_cli("bogus"), 1);
    EXPECT_EQ(run_cli("train --stage 2 --config " + cfg + " --out " + (d / "x").string()), 1);
    EXPECT_EQ(run_cli("train --stage 1 --config " + cfg + " --set data.nope=1 --out " + (d / "x").string()), 1);

    const fs::path bad = d / "corrupt.ckpt";
    fs::copy_file(d / "s2" / "stage2.ckpt", bad, fs::copy_options::overwrite_existing);
    {
        std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        f.put('\x7f');
    }
    EXPECT_EQ(run_cli("inspect --ckpt " + bad.string()), 2);
    EXPECT_EQ(run_cli("inspect --ckpt " + (d / "missing.ckpt").string()), 2);
}
