#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "eia/envsim.hpp"
#include "eia/model.hpp"
#include "eia/rng.hpp"
#include "eia/vocab.hpp"

using namespace eia;
using namespace eia::agent;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.grid_rows = 4;
    cfg.grid_cols = 4;
    cfg.patch_px = 4;
    cfg.d_model = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.max_seq_len = 128;
    return cfg;
}

Raster random_shot(const ModelConfig& cfg, std::uint64_t seed) {
    Raster r(cfg.image_h(), cfg.image_w(), 3);
    Rng rng(seed);
    for (auto& v : r.px) v = rng.next_double();
    return r;
}

} // namespace

TEST_CASE("tokenize/detokenize round trips") {
    const Vocabulary& v = vocab();
    const char* samples[] = {
        "goto [http://malicious-example.com]",
        "click [7]",
        "click [42]",
        "scroll",
        "stop",
        "click the item labeled melon",
        "press the chair item",
        "goto [http://market.example]",
        "open the first item",
    };
    for (const char* s : samples) {
        auto ids = v.tokenize(s);
        CHECK(v.detokenize(ids) == s);
    }
    CHECK(v.tokenize("").empty());
    CHECK(v.detokenize(std::vector<int>{}) == "");
}

TEST_CASE("tokenize rejects unknown symbols with position") {
    try {
        vocab().tokenize("click the zorp item");
        FAIL("expected UnknownSymbol");
    } catch (const UnknownSymbol& e) {
        CHECK(e.position == 10);
    }
}

TEST_CASE("label pools are disjoint") {
    std::set<std::string> seen;
    for (Pool p : {Pool::Train, Pool::Val, Pool::Test}) {
        for (const auto& w : vocab().label_words(p)) {
            CHECK(seen.insert(w).second);
        }
        CHECK(vocab().label_words(p).size() == 16);
    }
}

TEST_CASE("patchify is a bijection on pixels") {
    ModelConfig cfg = tiny_config();
    SUBCASE("constant image fills every patch with the constant") {
        num::Tensor img = num::Tensor::full({16, 16, 3}, 0.625);
        num::Tensor p = patchify(img, cfg);
        CHECK(p.shape() == num::Shape{16, 48});
        for (double v : p.value()) CHECK(v == 0.625);
    }
    SUBCASE("single nonzero pixel lands in patch (0,0) only") {
        num::Tensor img = num::Tensor::zeros({16, 16, 3});
        img.value()[0] = 1.0;
        num::Tensor p = patchify(img, cfg);
        for (std::size_t row = 1; row < 16; ++row)
            for (std::size_t c = 0; c < 48; ++c) CHECK(p.value()[row * 48 + c] == 0.0);
        CHECK(p.value()[0] == 1.0);
    }
    SUBCASE("random image reassembles exactly through the inverse permutation") {
        Rng rng(3);
        num::Tensor img = num::Tensor::zeros({16, 16, 3});
        for (auto& v : img.value()) v = rng.next_double();
        num::Tensor p = patchify(img, cfg);
        const auto idx = patch_index_map(cfg);
        // inverse-permutation oracle
        std::vector<double> rebuilt(img.size(), -1.0);
        for (std::size_t k = 0; k < idx.size(); ++k) rebuilt[idx[k]] = p.value()[k];
        CHECK(rebuilt == img.value());
        // bijection: every source index hit exactly once
        std::set<std::size_t> hit(idx.begin(), idx.end());
        CHECK(hit.size() == img.size());
    }
    SUBCASE("wrong dims raise DimMismatch") {
        num::Tensor img = num::Tensor::zeros({8, 16, 3});
        CHECK_THROWS_AS(patchify(img, cfg), DimMismatch);
    }
}

TEST_CASE("forward determinism and sensitivity") {
    ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, 77);
    Raster shot = random_shot(cfg, 5);
    std::vector<std::string> hist = {"click [21]", "scroll"};
    std::vector<int> resp = vocab().tokenize("click [3]");

    auto r1 = m.forward(Vocabulary::system_prompt(), "click the item labeled melon", hist, shot, resp);
    auto r2 = m.forward(Vocabulary::system_prompt(), "click the item labeled melon", hist, shot, resp);
    REQUIRE(r1.resp_logits.size() == r2.resp_logits.size());
    CHECK(std::memcmp(r1.resp_logits.value().data(), r2.resp_logits.value().data(),
                      r1.resp_logits.size() * sizeof(double)) == 0);

    SUBCASE("permuting history changes logits") {
        std::vector<std::string> swapped = {"scroll", "click [21]"};
        auto r3 = m.forward(Vocabulary::system_prompt(), "click the item labeled melon", swapped, shot, resp);
        bool any_diff = false;
        for (std::size_t i = 0; i < r1.resp_logits.size(); ++i)
            any_diff = any_diff || r1.resp_logits.value()[i] != r3.resp_logits.value()[i];
        CHECK(any_diff);
    }
    SUBCASE("zeroing the screenshot changes logits") {
        Raster black(cfg.image_h(), cfg.image_w(), 3, 0.0);
        auto r4 = m.forward(Vocabulary::system_prompt(), "click the item labeled melon", hist, black, resp);
        bool any_diff = false;
        for (std::size_t i = 0; i < r1.resp_logits.size(); ++i)
            any_diff = any_diff || r1.resp_logits.value()[i] != r4.resp_logits.value()[i];
        CHECK(any_diff);
    }
    SUBCASE("over-long sequence raises") {
        std::vector<std::string> huge(40, "click [21]");
        CHECK_THROWS_AS(
            m.forward(Vocabulary::system_prompt(), "click the item labeled melon", huge, shot, resp),
            SequenceTooLong);
    }
}

TEST_CASE("attention rows are simplex vectors and maps match the brute-force oracle") {
    ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, 11);
    Raster shot = random_shot(cfg, 9);
    std::vector<std::string> hist;
    AgentOutput out = m.generate_greedy("click the item labeled melon", hist, shot);

    REQUIRE(!out.action_tokens.empty());
    CHECK(out.action_tokens.size() <= static_cast<std::size_t>(cfg.gen_cap));

    for (const auto& per_head : out.attention_raw)
        for (const auto& row : per_head) {
            double s = 0.0;
            for (double v : row) {
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(std::fabs(s - 1.0) <= 1e-9);
        }

    AttentionMap map = extract_attention_map(out, cfg);
    // independent scalar triple-loop implementation
    const std::size_t n = out.attention_raw.size(), H = out.attention_raw[0].size();
    double total = 0.0;
    for (int i = 0; i < cfg.grid_rows; ++i)
        for (int j = 0; j < cfg.grid_cols; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t h = 0; h < H; ++h)
                    acc += out.attention_raw[t][h][out.layout.img_start +
                                                   static_cast<std::size_t>(i * cfg.grid_cols + j)];
            acc /= static_cast<double>(n * H);
            CHECK(std::fabs(acc - map.a[static_cast<std::size_t>(i * cfg.grid_cols + j)]) <= 1e-12);
            CHECK(map.a[static_cast<std::size_t>(i * cfg.grid_cols + j)] >= 0.0);
            total += acc;
        }
    CHECK(total <= 1.0 + 1e-9);
}

TEST_CASE("uniform attention rows give A = 1/K and degenerate means") {
    ModelConfig cfg = tiny_config();
    AgentOutput out;
    out.layout.prefix_len = 4;
    out.layout.img_start = 4;
    out.layout.resp_start = 20;
    out.layout.total = 22;
    const std::size_t S = out.layout.total;
    SUBCASE("uniform rows") {
        out.attention_raw = {{std::vector<double>(S, 1.0 / S), std::vector<double>(S, 1.0 / S)}};
        AttentionMap map = extract_attention_map(out, cfg);
        for (double v : map.a) CHECK(std::fabs(v - 1.0 / static_cast<double>(S)) <= 1e-15);
    }
    SUBCASE("single token single head is the raw row restricted to image keys") {
        Rng rng(17);
        std::vector<double> row(S);
        double z = 0;
        for (auto& v : row) {
            v = rng.next_double();
            z += v;
        }
        for (auto& v : row) v /= z;
        out.attention_raw = {{row}};
        AttentionMap map = extract_attention_map(out, cfg);
        for (std::size_t k = 0; k < map.a.size(); ++k)
            CHECK(map.a[k] == row[out.layout.img_start + k]);
    }
    SUBCASE("empty generation raises") {
        out.attention_raw.clear();
        CHECK_THROWS_AS(extract_attention_map(out, cfg), EmptyGeneration);
    }
}

TEST_CASE("greedy decode is deterministic") {
    ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, 123);
    Raster shot = random_shot(cfg, 42);
    std::vector<std::string> hist = {"click [22]"};
    AgentOutput a = m.generate_greedy("click the item labeled plum", hist, shot);
    AgentOutput b = m.generate_greedy("click the item labeled plum", hist, shot);
    CHECK(a.action_text == b.action_text);
    CHECK(a.action_tokens == b.action_tokens);
}

TEST_CASE("model config json round trip and checkpoint round trip") {
    ModelConfig cfg = tiny_config();
    cfg.attn_layer = 0;
    ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.grid_rows == cfg.grid_rows);
    CHECK(back.d_model == cfg.d_model);
    CHECK(back.attn_layer == 0);

    Model m = Model::init(cfg, 5);
    const auto dir = std::string("/tmp/eia_model_test");
    std::filesystem::create_directories(dir);
    m.save(dir + "/m.ckpt");
    Model l = Model::load(dir + "/m.ckpt", cfg);
    CHECK(l.weights_hash() == m.weights_hash());
    std::filesystem::remove_all(dir);
}

TEST_CASE("screenshot gradient matches finite differences through the full model") {
    ModelConfig cfg = tiny_config();
    Model m = Model::init(cfg, 21);
    Rng rng(77);
    num::Tensor shot = num::Tensor::zeros(
        {static_cast<std::size_t>(cfg.image_h()), static_cast<std::size_t>(cfg.image_w()), 3});
    for (auto& v : shot.value()) v = rng.next_double();
    std::vector<int> target = vocab().tokenize("goto [http://malicious-example.com]");
    target.push_back(vocab().eos());
    std::vector<std::string> hist = {"click [25]"};

    auto loss_of = [&](const num::Tensor& img) {
        auto fr = m.forward(Vocabulary::system_prompt(), "click the item labeled fig", hist, img,
                            std::span<const int>(target.data(), target.size() - 1));
        return num::cross_entropy(fr.resp_logits, target).item();
    };

    shot.set_requires_grad(true);
    num::Tape tape;
    auto fr = m.forward(Vocabulary::system_prompt(), "click the item labeled fig", hist, shot,
                        std::span<const int>(target.data(), target.size() - 1));
    num::Tensor loss = num::cross_entropy(fr.resp_logits, target);
    tape.backward(loss);

    Rng pick(3);
    std::vector<std::size_t> coords;
    for (int i = 0; i < 12; ++i) coords.push_back(pick.below(shot.size()));
    auto fd = num::finite_diff_at(loss_of, shot, coords, 1e-5);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double ad = shot.grad()[coords[i]];
        const double diff = std::fabs(ad - fd[i]);
        CHECK(diff <= 1e-4 * std::max({std::fabs(ad), std::fabs(fd[i]), 1e-4}));
    }
}
