// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "aquila/decoder.hpp"
#include "aquila/params.hpp"
#include "aquila/pyramid.hpp"

namespace aquila {

enum class Shape : std::uint8_t { Circle, Square, Triangle };
enum class Color : std::uint8_t { Red, Green, Blue };

inline constexpr std::array<const char*, 3> kShapeWords{"circle", "square", "triangle"};
inline constexpr std::array<const char*, 3> kColorWords{"red", "green", "blue"};
inline constexpr std::array<const char*, 4> kRelations{"above", "below", "left of", "right of"};
inline constexpr std::array<const char*, 3> kCountWords{"one", "two", "three"};
inline constexpr const char* kSingleWordPrompt = "Answer the question using a single word or phrase.";
inline constexpr std::size_t kSceneGrid = 4;

/// Closed word-level vocabulary. Ids 0..2 are <pad>, <bos>, <eos>.
class Vocab {
public:
    static constexpr int kPad = 0, kBos = 1, kEos = 2;

    Vocab() {
        for (const char* w : {"<pad>", "<bos>", "<eos>"}) add(w);
        add("a");
        for (const char* w : kColorWords) add(w);
        for (const char* w : kShapeWords) add(w);
        for (const char* w : {"above", "below", "left", "right", "of"}) add(w);
        for (const char* w : {"what", "color", "shape", "is", "the", "object", "how", "many", "objects", "are", "there", "?"})
            add(w);
        for (const char* w : kCountWords) add(w);
        for (const std::string& w : split_words(kSingleWordPrompt)) add(w);
    }

    std::size_t size() const noexcept { return words_.size(); }
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& words() const noexcept { return words_; }

    int id(const std::string& w) const {
        auto it = ids_.find(w);
        if (it == ids_.end()) throw ConfigError("word not in vocabulary: '" + w + "'");
        return it->second;
    }
    bool contains(const std::string& w) const { return ids_.count(w) != 0; }

    /// Lowercases, splits on whitespace and detaches '?' and '.'.
    static std::vector<std::string> split_words(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty()) out.push_back(cur), cur.clear();
        };
        for (char ch : text) {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                flush();
            } else if (ch == '?' || ch == '.') {
                flush();
                out.emplace_back(1, ch);
            } else {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            }
        }
        flush();
        return out;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& w : split_words(text)) ids.push_back(id(w));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int t : ids) {
            if (t == kBos || t == kEos || t == kPad) continue;
            if (!out.empty()) out += ' ';
            out += word(t);
        }
        return out;
    }

private:
    void add(const std::string& w) {
        if (ids_.count(w)) return;
        ids_.emplace(w, static_cast<int>(words_.size()));
        words_.push_back(w);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

struct SceneObject {
    Shape shape;
    Color color;
    std::size_t cell;  // row-major index on the 4×4 grid

    std::size_t row() const noexcept { return cell / kSceneGrid; }
    std::size_t col() const noexcept { return cell % kSceneGrid; }
    friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

/// 1–3 objects with pairwise distinct colors and cells.
struct Scene {
    std::vector<SceneObject> objects;
    friend bool operator==(const Scene&, const Scene&) = default;

    /// Objects ordered by color (red, green, blue): the first is the caption subject.
    std::vector<SceneObject> by_color() const {
        auto out = objects;
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.color < b.color; });
        return out;
    }
};

inline std::string relation_word(const SceneObject& subject, const SceneObject& object) {
    if (subject.row() < object.row()) return kRelations[0];
    if (subject.row() > object.row()) return kRelations[1];
    return subject.col() < object.col() ? kRelations[2] : kRelations[3];
}

/// "a <color> <shape> [<relation> a <color> <shape>]" for the two lowest-ranked colors.
inline std::string caption_text(const Scene& scene) {
    const auto objs = scene.by_color();
    auto np = [](const SceneObject& o) {
        return std::string("a ") + kColorWords[static_cast<std::size_t>(o.color)] + " " + kShapeWords[static_cast<std::size_t>(o.shape)];
    };
    std::string text = np(objs.at(0));
    if (objs.size() >= 2) text += " " + relation_word(objs[0], objs[1]) + " " + np(objs[1]);
    return text;
}

struct Question {
    std::string text;
    std::string answer;
};

enum class QuestionKind : std::uint8_t { ColorOfShape, ShapeOfColor, Count };

inline Question make_question(const Scene& scene, QuestionKind kind, std::size_t pick) {
    const auto& objs = scene.objects;
    if (kind == QuestionKind::ColorOfShape) {
        std::vector<const SceneObject*> unique;
        for (const auto& o : objs) {
            auto n = std::count_if(objs.begin(), objs.end(), [&](const auto& p) { return p.shape == o.shape; });
            if (n == 1) unique.push_back(&o);
        }
        if (!unique.empty()) {
            const SceneObject& o = *unique[pick % unique.size()];
            return {std::string("what color is the ") + kShapeWords[static_cast<std::size_t>(o.shape)] + " ?",
                    kColorWords[static_cast<std::size_t>(o.color)]};
        }
        kind = QuestionKind::Count;
    }
    if (kind == QuestionKind::ShapeOfColor) {
        const SceneObject& o = objs[pick % objs.size()];
        return {std::string("what shape is the ") + kColorWords[static_cast<std::size_t>(o.color)] + " object ?",
                kShapeWords[static_cast<std::size_t>(o.shape)]};
    }
    return {"how many objects are there ?", kCountWords.at(objs.size() - 1)};
}

/// Renders the scene on a black R×R canvas; each grid cell is R/4 pixels wide.
inline RgbImage render_scene(const Scene& scene, std::size_t resolution) {
    if (resolution % kSceneGrid != 0 || resolution < 8 * kSceneGrid) throw ConfigError("render resolution must be a multiple of 4, ≥ 32");
    RgbImage img;
    img.width = img.height = static_cast<std::uint32_t>(resolution);
    img.pixels.assign(resolution * resolution * 3, 0);
    const std::size_t cs = resolution / kSceneGrid;
    const double m = static_cast<double>(cs) / 8.0;
    const double extent = static_cast<double>(cs) - 2.0 * m;
    for (const auto& o : scene.objects) {
        for (std::size_t y = 0; y < cs; ++y)
            for (std::size_t x = 0; x < cs; ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                const double c = static_cast<double>(cs) / 2.0;
                bool inside = false;
                switch (o.shape) {
                case Shape::Circle:
                    inside = (px - c) * (px - c) + (py - c) * (py - c) <= (extent / 2.0) * (extent / 2.0);
                    break;
                case Shape::Square:
                    inside = px >= m && px <= m + extent && py >= m && py <= m + extent;
                    break;
                case Shape::Triangle:
                    if (py >= m && py <= m + extent) {
                        const double half = (py - m) / extent * extent / 2.0;
                        inside = std::abs(px - c) <= half;
                    }
                    break;
                }
                if (!inside) continue;
                const std::size_t gy = o.row() * cs + y, gx = o.col() * cs + x;
                std::uint8_t* p = &img.pixels[(gy * resolution + gx) * 3];
                p[static_cast<std::size_t>(o.color)] = 255;
            }
    }
    return img;
}

enum class DataVariant : std::uint8_t { Caption, Instruction };

/// One training or evaluation example.
struct SceneSample {
    Scene scene;
    RgbImage image;
    /// Text tokens including <bos>/<eos>.
    std::vector<int> tokens;
    /// Supervised token positions within `tokens` (each predicts the following token).
    std::vector<bool> text_mask;
    bool is_question = false;

    SequenceBatch batch(std::size_t n_visual) const {
        SequenceBatch b;
        b.n_visual = n_visual;
        b.tokens = tokens;
        b.loss_mask.assign(n_visual, false);
        b.loss_mask.insert(b.loss_mask.end(), text_mask.begin(), text_mask.end());
        return b;
    }
};

inline Scene random_scene(Rng& rng) {
    std::uniform_int_distribution<int> count_dist(1, 3), shape_dist(0, 2);
    std::array<int, 3> colors{0, 1, 2};
    std::shuffle(colors.begin(), colors.end(), rng);
    std::array<std::size_t, kSceneGrid * kSceneGrid> cells{};
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    std::shuffle(cells.begin(), cells.end(), rng);
    Scene scene;
    const int n = count_dist(rng);
    for (int i = 0; i < n; ++i) {
        scene.objects.push_back(SceneObject{static_cast<Shape>(shape_dist(rng)), static_cast<Color>(colors[static_cast<std::size_t>(i)]),
                                            cells[static_cast<std::size_t>(i)]});
    }
    return scene;
}

/// Caption example: <bos> caption <eos>, every caption token and <eos> supervised.
inline void set_caption_text(SceneSample& s, const Vocab& vocab) {
    s.tokens = {Vocab::kBos};
    for (int t : vocab.encode(caption_text(s.scene))) s.tokens.push_back(t);
    s.tokens.push_back(Vocab::kEos);
    s.text_mask.assign(s.tokens.size(), true);
    s.text_mask.back() = false;
    s.is_question = false;
}

/// Instruction example: <bos> question prompt answer <eos>; only the answer and <eos> supervised.
inline void set_question_text(SceneSample& s, const Question& q, const Vocab& vocab) {
    s.tokens = {Vocab::kBos};
    for (int t : vocab.encode(q.text + " " + kSingleWordPrompt)) s.tokens.push_back(t);
    const std::size_t answer_at = s.tokens.size();
    for (int t : vocab.encode(q.answer)) s.tokens.push_back(t);
    s.tokens.push_back(Vocab::kEos);
    s.text_mask.assign(s.tokens.size(), false);
    for (std::size_t i = answer_at - 1; i + 1 < s.tokens.size(); ++i) s.text_mask[i] = true;
    s.is_question = true;
}

inline Rng sample_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) { return derive_rng(seed, stream, index); }

/// Example `index` of a stream. Instruction-variant streams mix plain captions and single-word
/// questions half and half.
inline SceneSample make_sample(std::uint64_t seed, std::uint64_t stream, std::uint64_t index, DataVariant variant,
                               const Vocab& vocab, std::size_t resolution) {
    Rng rng = sample_rng(seed, stream, index);
    SceneSample s;
    s.scene = random_scene(rng);
    s.image = render_scene(s.scene, resolution);
    std::uniform_int_distribution<int> coin(0, 1), kind_dist(0, 2), pick_dist(0, 2);
    if (variant == DataVariant::Instruction && coin(rng) == 1) {
        const auto kind = static_cast<QuestionKind>(kind_dist(rng));
        set_question_text(s, make_question(s.scene, kind, static_cast<std::size_t>(pick_dist(rng))), vocab);
    } else {
        set_caption_text(s, vocab);
    }
    return s;
}

inline std::vector<SceneSample> make_dataset(std::size_t n, std::uint64_t seed, const Vocab& vocab,
                                             DataVariant variant = DataVariant::Caption, std::size_t resolution = 64,
                                             std::uint64_t stream = 0) {
    if (n == 0) throw ConfigError("make_dataset needs n ≥ 1");
    std::vector<SceneSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(seed, stream, i, variant, vocab, resolution));
    return out;
}

/// Textual stand-in for the visual block: each query cell holds the sum of its objects' color and
/// shape word embeddings, expressed as a [L² × V] selection matrix to multiply the embedding table.
template <class T>
Tensor<T> scene_word_selection(const Scene& scene, std::size_t query_side, const Vocab& vocab) {
    Tensor<T> sel({query_side * query_side, vocab.size()});
    for (const auto& o : scene.objects) {
        const auto qr = static_cast<std::size_t>((static_cast<double>(o.row()) + 0.5) * static_cast<double>(query_side) / kSceneGrid);
        const auto qc = static_cast<std::size_t>((static_cast<double>(o.col()) + 0.5) * static_cast<double>(query_side) / kSceneGrid);
        const std::size_t q = qr * query_side + qc;
        sel(q, static_cast<std::size_t>(vocab.id(kColorWords[static_cast<std::size_t>(o.color)]))) += T{1};
        sel(q, static_cast<std::size_t>(vocab.id(kShapeWords[static_cast<std::size_t>(o.shape)]))) += T{1};
    }
    return sel;
}

}  // namespace aquila
