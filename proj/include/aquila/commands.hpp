// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "aquila/checkpoint.hpp"
#include "aquila/config.hpp"
#include "aquila/model_gradcheck.hpp"
#include "aquila/trainer.hpp"

namespace aquila {

namespace fs = std::filesystem;

/// Config file (or defaults), then `section.key=value` overrides, then the AQ_SEED environment
/// variable. The result is validated.
inline RunConfig resolve_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
    RunConfig cfg = path ? load_config(*path) : RunConfig{};
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be section.key=value, got '" + o + "'");
        cfg.set(detail::trim(o.substr(0, eq)), o.substr(eq + 1));
    }
    if (const char* seed = std::getenv("AQ_SEED"); seed && *seed) cfg.set("data.seed", seed);
    cfg.validate();
    return cfg;
}

inline void print_gradcheck(std::ostream& os, const GradcheckReport& r) {
    char buf[256];
    for (const auto& e : r.entries) {
        std::snprintf(buf, sizeof buf, "%-40s %8zu  rel_err=%.3e  max_abs=%.3e  %s\n", e.name.c_str(), e.size, e.rel_error, e.max_abs,
                      e.pass ? "ok" : "FAIL");
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "%zu tensors, worst rel_err=%.3e, tolerance=%.0e: %s\n", r.entries.size(), r.worst(), r.tolerance,
                  r.passed() ? "PASS" : "FAIL");
    os << buf;
}

/// Returns the process exit status: 0 if every tensor passes, 3 otherwise.
inline int cmd_gradcheck(std::ostream& os, FaultOp fault = FaultOp::None) {
    const GradcheckReport r = run_model_gradcheck(FusionKind::Sfi, fault);
    print_gradcheck(os, r);
    return r.passed() ? 0 : exit_code_for(ErrorKind::Numeric);
}

inline std::ofstream open_log(const fs::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError(FormatCode::Io, "cannot open " + path.string() + " for writing");
    return os;
}

inline void save_model(const fs::path& path, const AquilaModel<float>& model) { write_checkpoint(path, checkpoint_from_store(model.store())); }

inline void load_model(const fs::path& path, AquilaModel<float>& model) { load_into_store(read_checkpoint(path), model.store()); }

/// Stage 1 trains from a fresh model (after decoder language pretraining); stage 2 continues from
/// a stage-1 checkpoint. Writes `stage<N>.ckpt` and `metrics_stage<N>.log` under `out`.
inline int cmd_train(std::ostream& os, const RunConfig& cfg, int stage, const std::optional<fs::path>& resume, const fs::path& out) {
    if (stage != 1 && stage != 2) throw UsageError("--stage must be 1 or 2");
    if (stage == 2 && !resume) throw UsageError("stage 2 requires --resume <stage-1 checkpoint>");
    const Vocab vocab;
    AquilaModel<float> model(model_config(cfg, vocab), cfg.data.seed);
    if (resume) load_model(*resume, model);
    fs::create_directories(out);
    const fs::path log_path = out / ("metrics_stage" + std::to_string(stage) + ".log");
    std::ofstream log_file = open_log(log_path);
    MetricsLog log(&log_file);
    log.header(cfg);
    std::vector<StepRecord> recs;
    if (stage == 1) {
        double init = 0.0;
        recs = train_stage1(model, cfg, vocab, &log, &init);
        os << "initial validation loss " << format_metric(init) << "\n";
    } else {
        recs = train_stage2(model, cfg, vocab, &log);
        const EvalResult e = evaluate(model, cfg, vocab);
        log.comment("eval stage=2 when=end val_loss=" + format_metric(e.val_loss) + " exact_match=" + format_metric(e.exact_match));
        os << "validation loss " << format_metric(e.val_loss) << ", caption exact match " << format_metric(e.exact_match) << "\n";
    }
    log.flush();
    const fs::path ck = out / ("stage" + std::to_string(stage) + ".ckpt");
    save_model(ck, model);
    os << "final training loss " << format_metric(recs.empty() ? 0.0 : recs.back().loss) << " after " << recs.size() << " steps\n";
    os << "wrote " << ck.string() << " and " << log_path.string() << "\n";
    return 0;
}

struct AblationRow {
    std::string name;
    FusionKind fusion;
    bool mda;
    PipelineResult result;
};

inline std::vector<AblationRow> ablation_variants() {
    return {{"Baseline", FusionKind::Concat, false, {}},
            {"+MDA", FusionKind::Concat, true, {}},
            {"+SFI", FusionKind::Sfi, false, {}},
            {"+SFI+MDA", FusionKind::Sfi, true, {}}};
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::string s;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-10s %-7s %-5s %14s %14s %12s\n", "variant", "fusion", "mda", "initial_loss", "final_loss",
                  "exact_match");
    s += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-10s %-7s %-5s %14.6f %14.6f %12.4f\n", r.name.c_str(), fusion_name(r.fusion).c_str(),
                      r.mda ? "yes" : "no", r.result.initial_val_loss, r.result.final_val_loss, r.result.exact_match);
        s += buf;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& a = rows[i].result;
        const auto& b = rows[best].result;
        if (a.exact_match > b.exact_match || (a.exact_match == b.exact_match && a.final_val_loss < b.final_val_loss)) best = i;
    }
    s += "best by exact match (ties by loss): " + rows[best].name + "\n";
    return s;
}

/// Trains the four fusion/re-alignment variants with identical seeds, data order and budgets.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const fs::path& out, std::ostream* progress = nullptr) {
    const Vocab vocab;
    fs::create_directories(out);
    auto rows = ablation_variants();
    for (auto& row : rows) {
        RunConfig v = cfg;
        v.model.fusion = row.fusion;
        v.model.mda = row.mda;
        AquilaModel<float> model(model_config(v, vocab), v.data.seed);
        std::string slug = row.name == "Baseline" ? "baseline" : row.name.substr(1);
        for (auto& ch : slug) ch = ch == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        std::ofstream log_file = open_log(out / ("ablate_" + slug + ".log"));
        MetricsLog log(&log_file);
        log.header(v);
        row.result = run_pipeline(model, v, vocab, &log);
        log.flush();
        if (progress) *progress << row.name << ": final loss " << format_metric(row.result.final_val_loss) << ", exact match "
                                << format_metric(row.result.exact_match) << std::endl;
    }
    return rows;
}

inline int cmd_ablate(std::ostream& os, const RunConfig& cfg, const fs::path& out) {
    const auto rows = run_ablation(cfg, out, &os);
    const std::string table = format_ablation(rows);
    std::ofstream t = open_log(out / "ablation.txt");
    t << table;
    os << table;
    return 0;
}

inline int cmd_caption(std::ostream& os, const RunConfig& cfg, const fs::path& ckpt, const fs::path& image_path) {
    const Vocab vocab;
    AquilaModel<float> model(model_config(cfg, vocab), cfg.data.seed);
    load_model(ckpt, model);
    const RgbImage img = read_image(image_path);
    if (img.width != cfg.model.pyramid.resolution || img.height != cfg.model.pyramid.resolution) {
        throw ShapeError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", model expects " +
                         std::to_string(cfg.model.pyramid.resolution) + "x" + std::to_string(cfg.model.pyramid.resolution));
    }
    os << vocab.decode(greedy_decode(model, img, cfg.data.max_new_tokens)) << "\n";
    return 0;
}

inline int cmd_inspect(std::ostream& os, const fs::path& ckpt) {
    const Checkpoint ck = read_checkpoint(ckpt);
    std::size_t scalars = 0;
    for (const auto& e : ck.entries) {
        os << e.name << " " << dims_str(e.dims) << " " << dtype_name(e.dtype) << "\n";
        scalars += dims_product(e.dims);
    }
    os << ck.entries.size() << " tensors, " << scalars << " values\n";
    return 0;
}

/// Writes `count` held-out scenes as `scene_<i>.img` plus their reference captions.
inline int cmd_sample(std::ostream& os, const RunConfig& cfg, const fs::path& out, std::size_t count) {
    const Vocab vocab;
    fs::create_directories(out);
    std::ofstream captions = open_log(out / "captions.txt");
    const SampleSource src = source(cfg, Stream::HeldOut, vocab);
    for (std::size_t i = 0; i < count; ++i) {
        const SceneSample s = src(i);
        const std::string name = "scene_" + std::to_string(i) + ".img";
        write_image(out / name, s.image);
        captions << name << "\t" << caption_text(s.scene) << "\n";
    }
    os << "wrote " << count << " scenes to " << out.string() << "\n";
    return 0;
}

}  // namespace aquila
