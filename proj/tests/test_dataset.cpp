// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "aquila/dataset.hpp"

using namespace aquila;

namespace {

bool same_sample(const SceneSample& a, const SceneSample& b) {
    return a.scene == b.scene && a.image.pixels == b.image.pixels && a.tokens == b.tokens && a.text_mask == b.text_mask;
}

}  // namespace

TEST(Tokenizer, LowercasesAndSplitsPunctuation) {
    EXPECT_EQ(Vocab::split_words("What color is the circle?"),
              (std::vector<std::string>{"what", "color", "is", "the", "circle", "?"}));
    EXPECT_EQ(Vocab::split_words("  single word or phrase. "), (std::vector<std::string>{"single", "word", "or", "phrase", "."}));
    const Vocab v;
    EXPECT_THROW(v.encode("a purple circle"), ConfigError);
    EXPECT_EQ(v.decode(v.encode("a red circle above a blue square")), "a red circle above a blue square");
}

TEST(Vocab, EqualsEnumeratedGrammarWords) {
    std::set<std::string> expected{"<pad>", "<bos>", "<eos>"};
    auto add = [&](const std::string& text) {
        for (const auto& w : Vocab::split_words(text)) expected.insert(w);
    };
    for (const char* c : kColorWords)
        for (const char* s : kShapeWords) {
            add(std::string("a ") + c + " " + s);
            for (const char* r : kRelations) add(std::string("a ") + c + " " + s + " " + r + " a " + c + " " + s);
            add(std::string("what color is the ") + s + " ?");
            add(std::string("what shape is the ") + c + " object ?");
        }
    add("how many objects are there ?");
    for (const char* n : kCountWords) add(n);
    add(kSingleWordPrompt);
    const Vocab v;
    EXPECT_EQ(std::set<std::string>(v.words().begin(), v.words().end()), expected);
    EXPECT_EQ(v.size(), expected.size());
    EXPECT_EQ(v.word(Vocab::kBos), "<bos>");
}

TEST(Scene, RelationRules) {
    const SceneObject a{Shape::Circle, Color::Red, 1 * 4 + 2};
    EXPECT_EQ(relation_word(a, {Shape::Square, Color::Blue, 3 * 4 + 0}), "above");
    EXPECT_EQ(relation_word(a, {Shape::Square, Color::Blue, 0 * 4 + 3}), "below");
    EXPECT_EQ(relation_word(a, {Shape::Square, Color::Blue, 1 * 4 + 3}), "left of");
    EXPECT_EQ(relation_word(a, {Shape::Square, Color::Blue, 1 * 4 + 0}), "right of");
}

TEST(Scene, CaptionUsesTwoLowestColorRanks) {
    Scene s;
    s.objects = {{Shape::Triangle, Color::Blue, 0}, {Shape::Square, Color::Green, 5}, {Shape::Circle, Color::Red, 15}};
    EXPECT_EQ(caption_text(s), "a red circle below a green square");
    s.objects = {{Shape::Triangle, Color::Blue, 0}};
    EXPECT_EQ(caption_text(s), "a blue triangle");
}

TEST(Dataset, DeterministicFromSeed) {
    const Vocab v;
    const auto a = make_dataset(20, 77, v, DataVariant::Instruction);
    const auto b = make_dataset(20, 77, v, DataVariant::Instruction);
    const auto c = make_dataset(20, 78, v, DataVariant::Instruction);
    int differing = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_TRUE(same_sample(a[i], b[i]));
        differing += !same_sample(a[i], c[i]);
    }
    EXPECT_GT(differing, 10);
    EXPECT_THROW(make_dataset(0, 1, v), ConfigError);
}

TEST(Dataset, SceneInvariantsAndCaptionConsistency) {
    const Vocab v;
    const auto data = make_dataset(300, 5, v);
    std::set<std::size_t> counts;
    for (const auto& s : data) {
        const auto& objs = s.scene.objects;
        ASSERT_GE(objs.size(), 1u);
        ASSERT_LE(objs.size(), 3u);
        counts.insert(objs.size());
        std::set<int> colors;
        std::set<std::size_t> cells;
        for (const auto& o : objs) {
            colors.insert(static_cast<int>(o.color));
            cells.insert(o.cell);
            EXPECT_LT(o.cell, 16u);
        }
        EXPECT_EQ(colors.size(), objs.size());
        EXPECT_EQ(cells.size(), objs.size());
        // Caption words name the subject's color and shape.
        const auto first = s.scene.by_color().front();
        const auto words = Vocab::split_words(caption_text(s.scene));
        EXPECT_EQ(words[1], kColorWords[static_cast<std::size_t>(first.color)]);
        EXPECT_EQ(words[2], kShapeWords[static_cast<std::size_t>(first.shape)]);
        EXPECT_EQ(v.decode(s.tokens), caption_text(s.scene));
        EXPECT_EQ(s.tokens.front(), Vocab::kBos);
        EXPECT_EQ(s.tokens.back(), Vocab::kEos);
    }
    EXPECT_EQ(counts, (std::set<std::size_t>{1, 2, 3}));
}

TEST(Dataset, RenderDrawsEachObjectInItsCell) {
    const Vocab v;
    for (const auto& s : make_dataset(50, 9, v)) {
        ASSERT_EQ(s.image.width, 64u);
        std::size_t lit = 0;
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x) {
                const std::uint8_t* p = &s.image.pixels[(y * 64 + x) * 3];
                if (p[0] == 0 && p[1] == 0 && p[2] == 0) continue;
                ++lit;
                const std::size_t cell = (y / 16) * 4 + x / 16;
                bool owned = false;
                for (const auto& o : s.scene.objects) {
                    if (o.cell != cell) continue;
                    owned = true;
                    for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(p[ch], ch == static_cast<int>(o.color) ? 255 : 0);
                }
                EXPECT_TRUE(owned);
            }
        for (const auto& o : s.scene.objects) {
            // Cell center is always inside the shape.
            const std::size_t cy = o.row() * 16 + 8, cx = o.col() * 16 + 8;
            EXPECT_EQ(s.image.pixels[(cy * 64 + cx) * 3 + static_cast<std::size_t>(o.color)], 255);
        }
        EXPECT_GT(lit, 0u);
    }
}

TEST(Dataset, InstructionSamplesSuperviseOnlyTheAnswer) {
    const Vocab v;
    const auto data = make_dataset(200, 11, v, DataVariant::Instruction);
    std::size_t questions = 0;
    for (const auto& s : data) {
        ASSERT_EQ(s.text_mask.size(), s.tokens.size());
        EXPECT_FALSE(s.text_mask.back());
        if (!s.is_question) continue;
        ++questions;
        const std::string text = v.decode(s.tokens);
        EXPECT_NE(text.find("answer the question using a single word or phrase ."), std::string::npos);
        // Exactly two supervised positions: the one predicting the answer and the one predicting <eos>.
        EXPECT_EQ(std::count(s.text_mask.begin(), s.text_mask.end(), true), 2);
        EXPECT_TRUE(s.text_mask[s.tokens.size() - 3]);
        EXPECT_TRUE(s.text_mask[s.tokens.size() - 2]);
        EXPECT_EQ(s.tokens.back(), Vocab::kEos);
    }
    EXPECT_GT(questions, 60u);
    EXPECT_LT(questions, 140u);
}

TEST(Dataset, QuestionAnswersMatchScene) {
    Scene s;
    s.objects = {{Shape::Circle, Color::Green, 3}, {Shape::Circle, Color::Blue, 7}, {Shape::Square, Color::Red, 9}};
    const auto q1 = make_question(s, QuestionKind::ColorOfShape, 0);
    EXPECT_EQ(q1.text, "what color is the square ?");  // the only unique shape
    EXPECT_EQ(q1.answer, "red");
    const auto q2 = make_question(s, QuestionKind::ShapeOfColor, 1);
    EXPECT_EQ(q2.text, "what shape is the blue object ?");
    EXPECT_EQ(q2.answer, "circle");
    EXPECT_EQ(make_question(s, QuestionKind::Count, 0).answer, "three");
}

TEST(Dataset, SceneWordSelectionMapsCellsToQueries) {
    const Vocab v;
    Scene s;
    s.objects = {{Shape::Square, Color::Red, 0}, {Shape::Circle, Color::Blue, 15}};
    const auto sel4 = scene_word_selection<double>(s, 4, v);
    EXPECT_EQ(sel4(0, static_cast<std::size_t>(v.id("red"))), 1.0);
    EXPECT_EQ(sel4(0, static_cast<std::size_t>(v.id("square"))), 1.0);
    EXPECT_EQ(sel4(15, static_cast<std::size_t>(v.id("blue"))), 1.0);
    const auto sel2 = scene_word_selection<double>(s, 2, v);
    EXPECT_EQ(sel2(3, static_cast<std::size_t>(v.id("circle"))), 1.0);
    double total = 0;
    for (double x : sel2.data()) total += x;
    EXPECT_EQ(total, 4.0);
}
