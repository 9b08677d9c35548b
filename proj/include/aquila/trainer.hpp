// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "aquila/config.hpp"
#include "aquila/dataset.hpp"
#include "aquila/model.hpp"
#include "aquila/optim.hpp"

namespace aquila {

/// Stage 0 is the decoder's language pretraining; stages 1 and 2 are the two fusion stages.
inline GroupMask stage_mask(int stage) {
    switch (stage) {
    case 0: return {Group::Decoder};
    case 1: return {Group::Projector, Group::Fusion};
    case 2: return {Group::Projector, Group::Fusion, Group::Realign, Group::Lora};
    }
    throw ConfigError("stage must be 0, 1 or 2, got " + std::to_string(stage));
}

struct TrainPlan {
    int stage = 1;
    GroupMask trainable;
    double base_lr = 1e-3;
    double warmup_ratio = 0.06;
    double weight_decay = 0.05;
    AdamWConfig adam;
    double grad_clip = 1.0;
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    std::size_t samples = 16000;
    std::uint64_t seed = 0;

    std::size_t steps_per_epoch() const { return (samples + batch_size - 1) / batch_size; }
    std::size_t total_steps() const { return epochs * steps_per_epoch(); }

    static TrainPlan for_stage(int stage, const StageConfig& c, std::uint64_t seed) {
        TrainPlan p;
        p.stage = stage;
        p.trainable = stage_mask(stage);
        p.base_lr = c.lr;
        p.warmup_ratio = c.warmup_ratio;
        p.weight_decay = c.weight_decay;
        p.adam = AdamWConfig{c.beta1, c.beta2, c.eps, c.weight_decay};
        p.grad_clip = c.grad_clip;
        p.epochs = c.epochs;
        p.batch_size = c.batch_size;
        p.samples = c.samples;
        p.seed = seed;
        return p;
    }
};

/// Disjoint sample streams drawn from one seed.
enum class Stream : std::uint64_t { Pretrain = 1, Stage1 = 2, Stage2 = 3, Validation = 4, HeldOut = 5 };

inline DataVariant stream_variant(Stream s) {
    return (s == Stream::Stage1 || s == Stream::HeldOut) ? DataVariant::Caption : DataVariant::Instruction;
}

struct SampleSource {
    std::uint64_t seed = 0;
    Stream stream = Stream::Stage1;
    const Vocab* vocab = nullptr;
    std::size_t resolution = 64;

    SceneSample operator()(std::size_t index) const {
        return make_sample(seed, static_cast<std::uint64_t>(stream), index, stream_variant(stream), *vocab, resolution);
    }

    std::vector<SceneSample> take(std::size_t n) const {
        std::vector<SceneSample> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back((*this)(i));
        return out;
    }
};

/// Writer for the plain-text metrics log: '#' header/comment lines, then `step,stage,lr,loss`.
class MetricsLog {
public:
    explicit MetricsLog(std::ostream* os) : os_(os) {}

    void header(const RunConfig& cfg) {
        if (!os_) return;
        for (const auto& [k, v] : cfg.entries()) *os_ << "# " << k << " = " << v << "\n";
        *os_ << "step,stage,lr,loss\n";
    }
    void comment(const std::string& text) {
        if (os_) *os_ << "# " << text << "\n";
    }
    void record(std::size_t step, int stage, double lr, double loss) {
        if (!os_) return;
        char buf[128];
        std::snprintf(buf, sizeof buf, "%zu,%d,%.9g,%.6f\n", step, stage, lr, loss);
        *os_ << buf;
    }
    void flush() {
        if (os_) os_->flush();
    }

private:
    std::ostream* os_;
};

inline std::string format_metric(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

namespace detail {

template <class T>
void add_grads(std::map<ParamId, Tensor<T>>& acc, const Graph<T>& g) {
    g.for_each_param_grad([&](std::size_t key, const Tensor<T>& grad) {
        auto it = acc.find(key);
        if (it == acc.end()) acc.emplace(key, grad);
        else ag::accumulate(it->second, grad);
    });
}

inline std::size_t supervised_count(const SequenceBatch& b) {
    return static_cast<std::size_t>(std::count(b.loss_mask.begin(), b.loss_mask.end(), true));
}

}  // namespace detail

/// Summed next-token NLL for one sample, built on `g`. Stage 0 replaces the visual block with the
/// scene's color/shape word embeddings and skips re-alignment.
template <class T>
Var sample_loss(const AquilaModel<T>& model, const Binder<T>& bind, const SceneSample& s, int stage, const Vocab& vocab,
                Rng* dropout_rng) {
    Graph<T>& g = bind.graph();
    const SequenceBatch batch = s.batch(model.config().n_visual());
    Var logits;
    if (stage == 0) {
        Var sel = g.constant(scene_word_selection<T>(s.scene, model.config().query_side, vocab));
        Var prefix = ag::matmul(g, sel, bind(model.decoder_weights().tok_emb));
        logits = model.forward_prefix(bind, prefix, batch);
    } else {
        const auto raw = model.encode(image_to_tensor<T>(s.image));
        auto enc = model.encode_visual(bind, raw);
        logits = model.forward(bind, enc, batch, dropout_rng);
    }
    return next_token_loss(g, logits, batch, false);
}

struct StepRecord {
    std::size_t step;
    int stage;
    double lr;
    double loss;
};

/// Optional per-step observer (used by tests to stop early or inspect state).
using StepHook = std::function<bool(const StepRecord&)>;

/// Runs a training stage: per step, forward each batch element, seed its backward with
/// 1/(supervised count of the whole batch) so gradients equal those of the batch-mean loss,
/// reduce in sample order, clip, and take one AdamW step on the trainable groups.
template <class T>
std::vector<StepRecord> run_stage(const TrainPlan& plan, const SampleSource& data, AquilaModel<T>& model, MetricsLog* log,
                                  std::size_t max_steps = 0, const StepHook& hook = {}) {
    if (plan.batch_size == 0 || plan.samples == 0 || plan.epochs == 0) throw ConfigError("empty training plan");
    const Vocab& vocab = *data.vocab;
    OptimState<T> state;
    Rng dropout_rng = sample_rng(plan.seed, 100 + static_cast<std::uint64_t>(plan.stage), 0);
    const std::size_t total = plan.total_steps();
    const std::size_t run_steps = max_steps ? std::min(max_steps, total) : total;
    std::vector<std::size_t> order(plan.samples);
    std::vector<StepRecord> records;
    records.reserve(run_steps);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < plan.epochs && step < run_steps; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (epoch > 0) {
            Rng shuffle = sample_rng(plan.seed, 200 + static_cast<std::uint64_t>(plan.stage), epoch);
            std::shuffle(order.begin(), order.end(), shuffle);
        }
        for (std::size_t b0 = 0; b0 < plan.samples && step < run_steps; b0 += plan.batch_size) {
            const std::size_t b1 = std::min(plan.samples, b0 + plan.batch_size);
            std::vector<SceneSample> batch;
            std::size_t count = 0;
            for (std::size_t i = b0; i < b1; ++i) {
                batch.push_back(data(order[i]));
                count += detail::supervised_count(batch.back().batch(model.config().n_visual()));
            }
            if (count == 0) throw NumericError("batch has no supervised positions");
            const double lr = cosine_warmup_lr(step, total, plan.warmup_ratio, plan.base_lr);
            std::map<ParamId, Tensor<T>> grads;
            double loss_sum = 0.0;
            for (const auto& s : batch) {
                Graph<T> g;
                Binder<T> bind(g, model.store(), plan.trainable);
                Var loss = sample_loss(model, bind, s, plan.stage, vocab, &dropout_rng);
                loss_sum += static_cast<double>(g.value(loss)[0]);
                g.backward(loss, static_cast<T>(1.0 / static_cast<double>(count)));
                detail::add_grads(grads, g);
            }
            const double loss = loss_sum / static_cast<double>(count);
            const double norm = clip_grad_norm(grads, plan.grad_clip);
            if (!std::isfinite(loss) || !std::isfinite(norm)) {
                std::ostringstream msg;
                msg << "non-finite training state at stage " << plan.stage << " step " << step << ": lr=" << lr << " loss=" << loss
                    << " grad_norm=" << norm;
                for (const auto& [id, g] : grads) {
                    double n = 0.0;
                    for (T x : g.data()) n += static_cast<double>(x) * static_cast<double>(x);
                    msg << "\n  " << model.store()[id].name << " grad_norm=" << std::sqrt(n);
                }
                throw NumericError(msg.str());
            }
            adamw_step(model.store(), grads, state, lr, plan.adam);
            StepRecord rec{step, plan.stage, lr, loss};
            records.push_back(rec);
            if (log) log->record(rec.step, rec.stage, rec.lr, rec.loss);
            ++step;
            if (hook && !hook(rec)) return records;
        }
    }
    return records;
}

/// Mean next-token NLL over the samples' supervised positions (no dropout).
template <class T>
double validation_loss(const AquilaModel<T>& model, const std::vector<SceneSample>& samples, const Vocab& vocab, int stage = 2) {
    const GroupMask none;
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& s : samples) {
        Graph<T> g;
        Binder<T> bind(g, model.store(), none);
        Var loss = sample_loss(model, bind, s, stage, vocab, nullptr);
        nll += static_cast<double>(g.value(loss)[0]);
        count += detail::supervised_count(s.batch(model.config().n_visual()));
    }
    if (count == 0) throw NumericError("validation set has no supervised positions");
    return nll / static_cast<double>(count);
}

/// Greedy decoding after [visual block][prompt...]; stops at <eos> or after max_new tokens.
template <class T>
std::vector<int> greedy_decode(const AquilaModel<T>& model, const RgbImage& image, std::size_t max_new,
                               std::vector<int> prompt = {Vocab::kBos}) {
    const GroupMask none;
    const std::size_t nv = model.config().n_visual();
    const std::size_t budget = model.config().decoder.max_seq_len - nv;
    if (prompt.empty() || prompt.size() > budget) throw CapacityError("prompt does not fit in the sequence budget");
    const auto raw = model.encode(image_to_tensor<T>(image));
    Graph<T> g;
    Binder<T> bind(g, model.store(), none);
    const auto enc = model.encode_visual(bind, raw);
    std::vector<int> out;
    std::vector<int> tokens = std::move(prompt);
    while (out.size() < max_new && tokens.size() < budget) {
        SequenceBatch b;
        b.n_visual = nv;
        b.tokens = tokens;
        b.loss_mask.assign(b.length(), false);
        Var logits = model.forward(bind, enc, b);
        const Tensor<T>& lv = g.value(logits);
        const auto last = lv.row(lv.rows() - 1);
        const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
        if (next == Vocab::kEos) break;
        out.push_back(next);
        tokens.push_back(next);
    }
    return out;
}

/// Fraction of samples whose greedy caption equals the grammar reference exactly.
template <class T>
double caption_exact_match(const AquilaModel<T>& model, const std::vector<SceneSample>& samples, const Vocab& vocab,
                           std::size_t max_new) {
    std::size_t hits = 0;
    for (const auto& s : samples) {
        if (vocab.decode(greedy_decode(model, s.image, max_new)) == caption_text(s.scene)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Model configuration for a run config: vocabulary size comes from the grammar.
inline ModelConfig model_config(const RunConfig& cfg, const Vocab& vocab) {
    ModelConfig m = cfg.model;
    m.decoder.vocab_size = vocab.size();
    return m;
}

inline SampleSource source(const RunConfig& cfg, Stream stream, const Vocab& vocab) {
    return SampleSource{cfg.data.seed, stream, &vocab, cfg.model.pyramid.resolution};
}

struct EvalResult {
    double val_loss = 0.0;
    double exact_match = 0.0;
};

template <class T>
EvalResult evaluate(const AquilaModel<T>& model, const RunConfig& cfg, const Vocab& vocab, bool with_captions = true) {
    EvalResult r;
    r.val_loss = validation_loss(model, source(cfg, Stream::Validation, vocab).take(cfg.data.val_samples), vocab);
    if (with_captions) {
        r.exact_match = caption_exact_match(model, source(cfg, Stream::HeldOut, vocab).take(cfg.data.eval_samples), vocab,
                                            cfg.data.max_new_tokens);
    }
    return r;
}

/// Fresh model → decoder language pretraining → stage 1. The stage-2 validation loss right
/// before stage 1 is logged as the pipeline's initial loss.
template <class T>
std::vector<StepRecord> train_stage1(AquilaModel<T>& model, const RunConfig& cfg, const Vocab& vocab, MetricsLog* log,
                                     double* initial_val_loss = nullptr) {
    auto pre = run_stage(TrainPlan::for_stage(0, cfg.pretrain, cfg.data.seed), source(cfg, Stream::Pretrain, vocab), model, log);
    const double init = validation_loss(model, source(cfg, Stream::Validation, vocab).take(cfg.data.val_samples), vocab);
    if (log) log->comment("eval stage=1 when=start val_loss=" + format_metric(init));
    if (initial_val_loss) *initial_val_loss = init;
    auto recs = run_stage(TrainPlan::for_stage(1, cfg.stage1, cfg.data.seed), source(cfg, Stream::Stage1, vocab), model, log);
    pre.insert(pre.end(), recs.begin(), recs.end());
    return pre;
}

template <class T>
std::vector<StepRecord> train_stage2(AquilaModel<T>& model, const RunConfig& cfg, const Vocab& vocab, MetricsLog* log) {
    return run_stage(TrainPlan::for_stage(2, cfg.stage2, cfg.data.seed), source(cfg, Stream::Stage2, vocab), model, log);
}

struct PipelineResult {
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    double exact_match = 0.0;
    double final_train_loss = 0.0;
};

/// Both stages on one in-memory model, evaluated at the end.
template <class T>
PipelineResult run_pipeline(AquilaModel<T>& model, const RunConfig& cfg, const Vocab& vocab, MetricsLog* log) {
    PipelineResult r;
    train_stage1(model, cfg, vocab, log, &r.initial_val_loss);
    auto recs = train_stage2(model, cfg, vocab, log);
    if (!recs.empty()) r.final_train_loss = recs.back().loss;
    const EvalResult e = evaluate(model, cfg, vocab);
    r.final_val_loss = e.val_loss;
    r.exact_match = e.exact_match;
    if (log) {
        log->comment("eval stage=2 when=end val_loss=" + format_metric(e.val_loss) + " exact_match=" + format_metric(e.exact_match));
    }
    return r;
}

}  // namespace aquila
