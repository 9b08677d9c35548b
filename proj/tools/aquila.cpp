// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aquila/aquila.hpp"

namespace {

struct ConfigArgs {
    std::optional<std::string> path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd, bool required) {
        auto* opt = cmd->add_option("--config", path, "Sectioned key=value run configuration");
        if (required) opt->required();
        cmd->add_option("--set", overrides, "Override a config value, e.g. --set train.stage1.lr=5e-4");
    }

    aquila::RunConfig resolve() const {
        std::optional<std::filesystem::path> p;
        if (path) p = *path;
        return aquila::resolve_config(p, overrides);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aquila: multi-scale vision-language fusion at desk scale"};
    app.require_subcommand(1);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every trainable tensor on the toy model");
    std::string fault = "none";
    gradcheck->add_option("--inject-fault", fault, "Corrupt one backward rule (negative control)")
        ->check(CLI::IsMember({"none", "linear", "gelu", "layer_norm", "causal_attention", "region_attention"}))
        ->group("");

    auto* train = app.add_subcommand("train", "Run training stage 1 or 2");
    ConfigArgs train_cfg;
    int stage = 0;
    std::optional<std::string> resume;
    std::string train_out;
    train_cfg.attach(train, true);
    train->add_option("--stage", stage, "Training stage")->required()->check(CLI::IsMember({1, 2}));
    train->add_option("--resume", resume, "Stage-1 checkpoint (required for stage 2)");
    train->add_option("--out", train_out, "Output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "Train the four fusion/re-alignment variants and compare");
    ConfigArgs ablate_cfg;
    std::string ablate_out;
    ablate_cfg.attach(ablate, true);
    ablate->add_option("--out", ablate_out, "Output directory")->required();

    auto* caption = app.add_subcommand("caption", "Greedy caption for one image");
    ConfigArgs caption_cfg;
    std::string ckpt, image;
    caption_cfg.attach(caption, true);
    caption->add_option("--ckpt", ckpt, "Checkpoint")->required();
    caption->add_option("--image", image, "Image file (u32 width, u32 height, RGB bytes)")->required();

    auto* inspect = app.add_subcommand("inspect", "List checkpoint tensors");
    std::string inspect_ckpt;
    inspect->add_option("--ckpt", inspect_ckpt, "Checkpoint")->required();

    auto* sample = app.add_subcommand("sample", "Write held-out synthetic scenes and their captions");
    ConfigArgs sample_cfg;
    std::string sample_out;
    std::size_t count = 8;
    sample_cfg.attach(sample, false);
    sample->add_option("--out", sample_out, "Output directory")->required();
    sample->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : aquila::exit_code_for(aquila::ErrorKind::Usage);
    }

    try {
        if (*gradcheck) {
            using aquila::FaultOp;
            const FaultOp op = fault == "linear"             ? FaultOp::Linear
                               : fault == "gelu"             ? FaultOp::Gelu
                               : fault == "layer_norm"       ? FaultOp::LayerNorm
                               : fault == "causal_attention" ? FaultOp::CausalAttention
                               : fault == "region_attention" ? FaultOp::RegionAttention
                                                             : FaultOp::None;
            return aquila::cmd_gradcheck(std::cout, op);
        }
        if (*train) {
            std::optional<std::filesystem::path> r;
            if (resume) r = *resume;
            return aquila::cmd_train(std::cout, train_cfg.resolve(), stage, r, train_out);
        }
        if (*ablate) return aquila::cmd_ablate(std::cout, ablate_cfg.resolve(), ablate_out);
        if (*caption) return aquila::cmd_caption(std::cout, caption_cfg.resolve(), ckpt, image);
        if (*inspect) return aquila::cmd_inspect(std::cout, inspect_ckpt);
        if (*sample) return aquila::cmd_sample(std::cout, sample_cfg.resolve(), sample_out, count);
    } catch (const aquila::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return aquila::exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
