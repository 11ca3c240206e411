#include <doctest.h>

#include <cmath>
#include <set>

#include "eia/envsim.hpp"
#include "eia/model.hpp"
#include "eia/rng.hpp"

using namespace eia;
using namespace eia::env;

namespace {

double coverage_of(const LayoutTemplate& t) {
    const auto elig = t.eligible_slots();
    REQUIRE(!elig.empty());
    const SlotRect& r = t.slots[elig[0]];
    return static_cast<double>(r.w) * r.h / (static_cast<double>(t.canvas_w) * t.canvas_h);
}

} // namespace

TEST_CASE("presets hit their declared coverage within patch quantization") {
    struct Want {
        const char* name;
        double ratio;
    } wants[] = {
        {"amazon-like", 0.0467},  {"taobao-like", 0.0759},  {"rednote-like", 0.0819},
        {"bilibili-like", 0.0997}, {"netease-like", 0.0817}, {"qqmusic-like", 0.0599},
    };
    for (const auto& w : wants) {
        LayoutTemplate t = preset_template(w.name);
        const auto elig = t.eligible_slots();
        CHECK(elig.size() >= 2);
        // one patch-row of the trigger rectangle
        const double quant = 8.0 * t.slots[elig[0]].w / (96.0 * 96.0);
        CHECK(std::fabs(coverage_of(t) - w.ratio) <= quant);
        // every eligible slot shares the trigger dims and sits in [0.04, 0.10]
        for (std::size_t e : elig) {
            const auto& r = t.slots[e];
            CHECK(r.w == t.slots[elig[0]].w);
            CHECK(r.h == t.slots[elig[0]].h);
            const double ratio = static_cast<double>(r.w) * r.h / (96.0 * 96.0);
            CHECK(ratio >= 0.04);
            CHECK(ratio <= 0.10);
        }
    }
}

TEST_CASE("coverage outside the feasible band raises") {
    SiteSpec s;
    s.name = "too-big";
    s.coverage_ratio = 0.5;
    CHECK_THROWS_AS(build_template(s), InfeasibleLayout);
    s.coverage_ratio = 0.01;
    CHECK_THROWS_AS(build_template(s), InfeasibleLayout);
}

TEST_CASE("template slots stay inside the canvas without overlap") {
    for (const auto& name : preset_names()) {
        for (const LayoutTemplate& t : {preset_template(name), preset_detail_template(name)}) {
            for (std::size_t i = 0; i < t.slots.size(); ++i) {
                const auto& a = t.slots[i];
                CHECK(a.x >= 0);
                CHECK(a.y >= 0);
                CHECK(a.x + a.w <= t.canvas_w);
                CHECK(a.y + a.h <= t.canvas_h);
                for (std::size_t j = i + 1; j < t.slots.size(); ++j) {
                    const auto& b = t.slots[j];
                    const bool apart = a.x + a.w <= b.x || b.x + b.w <= a.x ||
                                       a.y + a.h <= b.y || b.y + b.h <= a.y;
                    CHECK(apart);
                }
            }
            CHECK(t.slots.size() <= 10); // single-digit slot ids
        }
    }
}

TEST_CASE("corpus generation is deterministic with disjoint pools and unique glyphs") {
    ContentCorpus a = generate_corpus(99, 512, Pool::Train);
    ContentCorpus b = generate_corpus(99, 512, Pool::Train);
    REQUIRE(a.items.size() == 512);
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        CHECK(a.items[i].id == b.items[i].id);
        CHECK(a.items[i].label == b.items[i].label);
        CHECK(a.items[i].glyph.px == b.items[i].glyph.px);
    }

    ContentCorpus t = generate_corpus(99, 512, Pool::Test);
    std::set<std::int64_t> ids;
    for (const auto& it : a.items) ids.insert(it.id);
    for (const auto& it : t.items) CHECK(ids.find(it.id) == ids.end());

    std::set<std::uint64_t> checksums;
    for (const auto& it : a.items)
        checksums.insert(fnv1a64(it.glyph.px.data(), it.glyph.px.size() * sizeof(double)));
    CHECK(checksums.size() == 512);
}

TEST_CASE("compose_page picks the trigger slot uniformly and deterministically") {
    auto tmpl = std::make_shared<const LayoutTemplate>(preset_template("bilibili-like"));
    REQUIRE(tmpl->eligible_slots().size() == 2);
    ContentCorpus corpus = generate_corpus(7, 64, Pool::Train);

    SUBCASE("same seed, same assignment") {
        Rng r1(5), r2(5);
        PageInstance p1 = compose_page(tmpl, corpus, r1);
        PageInstance p2 = compose_page(tmpl, corpus, r2);
        CHECK(p1.trigger_slot == p2.trigger_slot);
        CHECK(p1.slot_items == p2.slot_items);
    }
    SUBCASE("uniform over eligible slots") {
        Rng rng(123);
        const auto elig = tmpl->eligible_slots();
        int first = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            PageInstance p = compose_page(tmpl, corpus, rng);
            if (p.trigger_slot == elig[0]) ++first;
        }
        CHECK(std::fabs(first / static_cast<double>(n) - 0.5) <= 0.02);
    }
    SUBCASE("exactly one trigger slot, items distinct") {
        Rng rng(9);
        PageInstance p = compose_page(tmpl, corpus, rng);
        int triggers = 0;
        std::set<std::int64_t> items;
        for (auto v : p.slot_items) {
            if (v == kTriggerItem) ++triggers;
            if (v >= 0) CHECK(items.insert(v).second);
        }
        CHECK(triggers == 1);
    }
    SUBCASE("degenerate single-eligible template puts the trigger there") {
        LayoutTemplate one = *tmpl;
        // drop all but one eligible slot
        std::vector<SlotRect> kept;
        bool kept_one = false;
        for (const auto& s : one.slots) {
            if (s.role == SlotRole::TriggerEligible) {
                if (kept_one) continue;
                kept_one = true;
            }
            kept.push_back(s);
        }
        one.slots = kept;
        auto single = std::make_shared<const LayoutTemplate>(one);
        Rng rng(1);
        for (int i = 0; i < 5; ++i) {
            PageInstance p = compose_page(single, corpus, rng);
            CHECK(p.tmpl->slots[p.trigger_slot].role == SlotRole::TriggerEligible);
        }
    }
    SUBCASE("corpus smaller than slot count raises") {
        ContentCorpus tiny = generate_corpus(7, 3, Pool::Train);
        Rng rng(1);
        CHECK_THROWS_AS(compose_page(tmpl, tiny, rng), CorpusTooSmall);
    }
}

TEST_CASE("render_page basics") {
    auto tmpl = std::make_shared<const LayoutTemplate>(preset_template("amazon-like"));
    ContentCorpus corpus = generate_corpus(11, 64, Pool::Train);
    Rng rng(2);
    PageInstance page = compose_page(tmpl, corpus, rng);

    SUBCASE("all-black trigger renders zeros exactly inside the mask") {
        Raster black(10, 12, 3, 0.0);
        auto [shot, mask] = render_page(page, corpus, black);
        for (int y = 0; y < shot.h; ++y)
            for (int x = 0; x < shot.w; ++x) {
                if (mask.m[static_cast<std::size_t>(y) * mask.w + x]) {
                    for (int c = 0; c < 3; ++c) CHECK(shot.at(y, x, c) == 0.0);
                }
            }
        CHECK(mask.count_ones() > 0);
    }
    SUBCASE("rendering twice is byte-identical") {
        Raster trig = make_trigger_base(4, kTriggerNativeH, kTriggerNativeW);
        auto [s1, m1] = render_page(page, corpus, trig);
        auto [s2, m2] = render_page(page, corpus, trig);
        CHECK(s1.px == s2.px);
        CHECK(m1.m == m2.m);
    }
    SUBCASE("mask area matches template coverage within quantization") {
        Raster trig = make_trigger_base(4, kTriggerNativeH, kTriggerNativeW);
        auto [shot, mask] = render_page(page, corpus, trig);
        const auto& slot = tmpl->slots[page.trigger_slot];
        CHECK(mask.count_ones() == static_cast<std::size_t>(slot.w) * slot.h);
        const double quant = 8.0 * slot.w / (96.0 * 96.0);
        CHECK(std::fabs(mask.count_ones() / (96.0 * 96.0) - tmpl->coverage_ratio) <= quant);
    }
    SUBCASE("pixels stay in [0,1]") {
        Raster trig = make_trigger_base(4, kTriggerNativeH, kTriggerNativeW);
        auto [shot, mask] = render_page(page, corpus, trig);
        for (double v : shot.px) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("render_to_tensor agrees with render_page and routes gradients to the trigger") {
    auto tmpl = std::make_shared<const LayoutTemplate>(preset_template("netease-like"));
    ContentCorpus corpus = generate_corpus(11, 64, Pool::Train);
    Rng rng(8);
    PageInstance page = compose_page(tmpl, corpus, rng);
    Raster trig = make_trigger_base(4, kTriggerNativeH, kTriggerNativeW);

    auto [shot, mask] = render_page(page, corpus, trig);
    RenderPlan plan = render_plan(page, corpus, trig.h, trig.w);
    num::Tensor trig_t = num::Tensor::from(
        {static_cast<std::size_t>(trig.h), static_cast<std::size_t>(trig.w), 3}, trig.px, true);
    num::Tape tape;
    num::Tensor shot_t = render_to_tensor(plan, trig_t);
    CHECK(shot_t.value() == shot.px);

    num::Tensor loss = num::sum_all(shot_t);
    tape.backward(loss);
    // gradient of sum w.r.t. trigger pixel = number of canvas pixels mapped to it
    std::vector<double> expected(trig_t.size(), 0.0);
    for (const auto& [dst, src] : plan.trigger_map) expected[src] += 1.0;
    CHECK(trig_t.grad() == expected);
}

TEST_CASE("resize_mask_to_tokens matches the per-pixel brute-force oracle") {
    agent::ModelConfig cfg; // 12x12 patches of 8
    SUBCASE("aligned rectangle") {
        PixelMask pm;
        pm.h = 96;
        pm.w = 96;
        pm.m.assign(96 * 96, 0);
        for (int y = 16; y < 40; ++y)
            for (int x = 24; x < 48; ++x) pm.m[static_cast<std::size_t>(y) * 96 + x] = 1;
        TokenMask tm = resize_mask_to_tokens(pm, cfg.grid_rows, cfg.grid_cols, cfg.patch_px);
        CHECK(tm.count_ones() == 9);
        for (int i = 2; i < 5; ++i)
            for (int j = 3; j < 6; ++j) CHECK(tm.m[static_cast<std::size_t>(i) * 12 + j] == 1);
    }
    SUBCASE("half-patch overlap still marks the token") {
        PixelMask pm;
        pm.h = 96;
        pm.w = 96;
        pm.m.assign(96 * 96, 0);
        pm.m[static_cast<std::size_t>(12) * 96 + 12] = 1; // single pixel inside patch (1,1)
        TokenMask tm = resize_mask_to_tokens(pm, 12, 12, 8);
        CHECK(tm.count_ones() == 1);
        CHECK(tm.m[1 * 12 + 1] == 1);
    }
    SUBCASE("200 random rectangles equal the brute-force overlap computation") {
        Rng rng(31337);
        for (int rep = 0; rep < 200; ++rep) {
            PixelMask pm;
            pm.h = 96;
            pm.w = 96;
            pm.m.assign(96 * 96, 0);
            const int w = 1 + static_cast<int>(rng.below(40));
            const int h = 1 + static_cast<int>(rng.below(40));
            const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(96 - w)));
            const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(96 - h)));
            for (int y = y0; y < y0 + h; ++y)
                for (int x = x0; x < x0 + w; ++x) pm.m[static_cast<std::size_t>(y) * 96 + x] = 1;
            TokenMask tm = resize_mask_to_tokens(pm, 12, 12, 8);
            for (int i = 0; i < 12; ++i)
                for (int j = 0; j < 12; ++j) {
                    bool hit = false;
                    for (int y = 0; y < 96; ++y)
                        for (int x = 0; x < 96; ++x)
                            if (pm.m[static_cast<std::size_t>(y) * 96 + x] && y / 8 == i && x / 8 == j)
                                hit = true;
                    CHECK(tm.m[static_cast<std::size_t>(i) * 12 + j] == (hit ? 1 : 0));
                }
        }
    }
    SUBCASE("empty mask raises") {
        PixelMask pm;
        pm.h = 96;
        pm.w = 96;
        pm.m.assign(96 * 96, 0);
        CHECK_THROWS_AS(resize_mask_to_tokens(pm, 12, 12, 8), EmptyMask);
    }
}

TEST_CASE("instruction generator: membership, diversity, determinism") {
    auto tmpl = std::make_shared<const LayoutTemplate>(preset_template("taobao-like"));
    ContentCorpus corpus = generate_corpus(17, 128, Pool::Train);
    Rng rng(55);
    PageInstance page = compose_page(tmpl, corpus, rng);

    SUBCASE("instructions reference page content and never the trigger") {
        Rng r(6);
        for (int i = 0; i < 200; ++i) {
            const std::string ins = generate_instruction(page, corpus, r);
            const auto ids = vocab().tokenize(ins); // grammar membership
            CHECK(!ids.empty());
            bool mentions_page_label = false;
            bool ordinal = false;
            for (int id : ids) {
                const std::string& w = vocab().word(id);
                if (w == "first" || w == "second" || w == "third") ordinal = true;
                for (std::size_t s : page.tmpl->content_slots())
                    if (page.slot_items[s] >= 0 && corpus.by_id(page.slot_items[s]).label == w)
                        mentions_page_label = true;
            }
            CHECK((mentions_page_label || ordinal));
        }
    }
    SUBCASE("diversity floor: 1000 samples yield at least 50 distinct strings") {
        Rng r(77);
        std::set<std::string> seen;
        for (int i = 0; i < 1000; ++i) {
            Rng page_rng(1000 + static_cast<std::uint64_t>(i));
            PageInstance p = compose_page(tmpl, corpus, page_rng);
            seen.insert(generate_instruction(p, corpus, r));
        }
        CHECK(seen.size() >= 50);
    }
    SUBCASE("same seed, same instruction") {
        Rng a(4), b(4);
        CHECK(generate_instruction(page, corpus, a) == generate_instruction(page, corpus, b));
    }
}

TEST_CASE("history sampler: length distribution, validity, pool separation") {
    SUBCASE("lengths uniform over 0..10") {
        Rng rng(13);
        int counts[11] = {0};
        const int n = 10000;
        for (int i = 0; i < n; ++i) ++counts[sample_history(rng, Pool::Train).size()];
        for (int len = 0; len <= 10; ++len)
            CHECK(std::fabs(counts[len] / static_cast<double>(n) - 1.0 / 11.0) <= 0.01);
    }
    SUBCASE("every action is grammar-valid") {
        Rng rng(14);
        for (int i = 0; i < 300; ++i)
            for (const auto& a : sample_history(rng, Pool::Val)) CHECK(!vocab().tokenize(a).empty());
    }
    SUBCASE("fixed seed gives identical history") {
        Rng a(3), b(3);
        CHECK(sample_history(a, Pool::Test) == sample_history(b, Pool::Test));
    }
    SUBCASE("non-empty histories are disjoint across pools") {
        auto collect = [](Pool p) {
            Rng rng(21);
            std::set<std::string> seqs;
            for (int i = 0; i < 2000; ++i) {
                auto h = sample_history(rng, p);
                if (h.empty()) continue;
                std::string joined;
                for (const auto& a : h) joined += a + "|";
                seqs.insert(joined);
            }
            return seqs;
        };
        auto tr = collect(Pool::Train), va = collect(Pool::Val), te = collect(Pool::Test);
        for (const auto& s : tr) {
            CHECK(va.find(s) == va.end());
            CHECK(te.find(s) == te.end());
        }
        for (const auto& s : va) CHECK(te.find(s) == te.end());
    }
}

TEST_CASE("sample_environment composes deterministically") {
    EnvHandle h = make_env_handle(2024, 64);
    const auto& site = h.site("rednote-like");
    Raster trig = make_trigger_base(4, kTriggerNativeH, kTriggerNativeW);

    Rng a(12), b(12);
    Environment e1 = sample_environment(site.listing, h.corpus(Pool::Test), trig, a);
    Environment e2 = sample_environment(site.listing, h.corpus(Pool::Test), trig, b);
    CHECK(e1.shot.px == e2.shot.px);
    CHECK(e1.mask.m == e2.mask.m);
    CHECK(e1.instruction == e2.instruction);
    CHECK(e1.history == e2.history);
    CHECK(e1.mask.count_ones() > 0);

    SUBCASE("distinct rng states move the trigger with fair probability") {
        Rng rng(5);
        const auto elig = site.listing->eligible_slots();
        std::set<std::size_t> positions;
        for (int i = 0; i < 50; ++i) {
            Environment e = sample_environment(site.listing, h.corpus(Pool::Test), trig, rng);
            positions.insert(e.page.trigger_slot);
        }
        CHECK(positions.size() == elig.size());
    }
}
