#include "eia/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace eia::env {

std::vector<std::size_t> LayoutTemplate::content_slots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < slots.size(); ++i)
        if (slots[i].role == SlotRole::Content) out.push_back(i);
    return out;
}

std::vector<std::size_t> LayoutTemplate::eligible_slots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < slots.size(); ++i)
        if (slots[i].role == SlotRole::TriggerEligible) out.push_back(i);
    return out;
}

std::size_t PixelMask::count_ones() const {
    std::size_t n = 0;
    for (auto v : m) n += v != 0;
    return n;
}

std::size_t TokenMask::count_ones() const {
    std::size_t n = 0;
    for (auto v : m) n += v != 0;
    return n;
}

// ---- layout construction ----

namespace {

constexpr int kCanvas = 96;
constexpr int kBannerH = 8;
constexpr int kNavH = 8;

// best w x h rectangle for the requested coverage, searched over a bounded
// range; ties prefer squarer then narrower rectangles
std::pair<int, int> trigger_dims(double coverage_ratio) {
    const double target = coverage_ratio * kCanvas * kCanvas;
    int bw = 0, bh = 0, btie = 1 << 20;
    double berr = 1e18;
    for (int w = 16; w <= 32; ++w)
        for (int h = 12; h <= 36; ++h) {
            const double err = std::fabs(static_cast<double>(w) * h - target);
            const int tie = std::abs(w - h);
            const bool better = err < berr - 1e-9 ||
                                (std::fabs(err - berr) <= 1e-9 && (tie < btie || (tie == btie && w < bw)));
            if (better) {
                berr = err;
                bw = w;
                bh = h;
                btie = tie;
            }
        }
    return {bw, bh};
}

void check_no_overlap(const std::vector<SlotRect>& slots, const std::string& site) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& a = slots[i];
        if (a.x < 0 || a.y < 0 || a.x + a.w > kCanvas || a.y + a.h > kCanvas)
            throw InfeasibleLayout(site + ": slot outside canvas");
        for (std::size_t j = i + 1; j < slots.size(); ++j) {
            const auto& b = slots[j];
            const bool apart = a.x + a.w <= b.x || b.x + b.w <= a.x || a.y + a.h <= b.y || b.y + b.h <= a.y;
            if (!apart) throw InfeasibleLayout(site + ": slots overlap");
        }
    }
}

void apply_style(LayoutTemplate& t, std::uint64_t style_seed) {
    Rng rng(style_seed);
    t.style_seed = style_seed;
    t.bg_shade = 0.86 + 0.08 * rng.next_double();
    t.border_shade = 0.20 + 0.15 * rng.next_double();
    for (auto& c : t.tint) c = 0.94 + 0.06 * rng.next_double();
}

} // namespace

LayoutTemplate build_template(const SiteSpec& spec) {
    if (!(spec.coverage_ratio >= 0.03 && spec.coverage_ratio <= 0.12))
        throw InfeasibleLayout(spec.name + ": coverage ratio " + std::to_string(spec.coverage_ratio) +
                               " outside [0.03, 0.12]");
    LayoutTemplate t;
    t.site_name = spec.name;
    t.coverage_ratio = spec.coverage_ratio;
    apply_style(t, spec.style_seed);

    const auto [tw, th] = trigger_dims(spec.coverage_ratio);
    const int ex = kCanvas - tw;

    std::vector<SlotRect> eligible;
    for (int y = kBannerH + kNavH; y + th <= kCanvas && eligible.size() < 3; y += th + 6)
        eligible.push_back({ex, y, tw, th, SlotRole::TriggerEligible});
    if (eligible.size() < 2)
        throw InfeasibleLayout(spec.name + ": fewer than two trigger-eligible slots fit");

    const int ncols = ex >= 72 ? 3 : 2;
    std::vector<std::pair<int, int>> cells;
    for (int cy = 16; cy + kGlyphH <= kCanvas; cy += kGlyphH)
        for (int cx = 0; cx + kGlyphW <= ncols * kGlyphW; cx += kGlyphW)
            cells.emplace_back(cx, cy);
    Rng cell_rng(spec.style_seed ^ 0x9d2c5680cafef17dULL);
    for (std::size_t i = cells.size(); i > 1; --i)
        std::swap(cells[i - 1], cells[cell_rng.below(i)]);
    const std::size_t want = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(1, spec.content_slot_count)), 8 - eligible.size());
    if (cells.size() < want) throw InfeasibleLayout(spec.name + ": content grid too small");
    cells.resize(want);
    std::sort(cells.begin(), cells.end(),
              [](auto a, auto b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });

    t.slots.push_back({0, 0, kCanvas, kBannerH, SlotRole::Banner});
    t.slots.push_back({0, kBannerH, kCanvas, kNavH, SlotRole::Nav});
    for (auto [cx, cy] : cells) t.slots.push_back({cx, cy, kGlyphW, kGlyphH, SlotRole::Content});
    for (auto& e : eligible) t.slots.push_back(e);

    check_no_overlap(t.slots, spec.name);
    return t;
}

LayoutTemplate build_detail_template(const SiteSpec& spec) {
    SiteSpec s = spec;
    LayoutTemplate t;
    t.site_name = s.name;
    t.coverage_ratio = s.coverage_ratio;
    t.detail_layout = true;
    apply_style(t, s.style_seed ^ 0xdeadbeef1234ULL);
    if (!(s.coverage_ratio >= 0.03 && s.coverage_ratio <= 0.12))
        throw InfeasibleLayout(s.name + ": coverage ratio outside [0.03, 0.12]");

    const auto [tw, th] = trigger_dims(s.coverage_ratio);
    const int ex = kCanvas - tw;
    t.slots.push_back({0, 0, kCanvas, kBannerH, SlotRole::Banner});
    t.slots.push_back({0, kBannerH, kCanvas, kNavH, SlotRole::Nav});
    t.slots.push_back({24, 32, kGlyphW, kGlyphH, SlotRole::Content}); // item display
    int added = 0;
    for (int y = kBannerH + kNavH; y + th <= kCanvas && added < 2; y += th + 6, ++added)
        t.slots.push_back({ex, y, tw, th, SlotRole::TriggerEligible});
    if (added < 2) throw InfeasibleLayout(s.name + ": detail layout needs two eligible slots");
    check_no_overlap(t.slots, s.name + " (detail)");
    return t;
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"amazon-like",   "taobao-like",  "rednote-like",
                                                   "bilibili-like", "netease-like", "qqmusic-like"};
    return names;
}

SiteSpec preset_spec(std::string_view name) {
    double coverage = 0.0;
    if (name == "amazon-like") coverage = 0.0467;
    else if (name == "taobao-like") coverage = 0.0759;
    else if (name == "rednote-like") coverage = 0.0819;
    else if (name == "bilibili-like") coverage = 0.0997;
    else if (name == "netease-like") coverage = 0.0817;
    else if (name == "qqmusic-like") coverage = 0.0599;
    else throw InfeasibleLayout("unknown preset '" + std::string(name) + "'");
    SiteSpec spec;
    spec.name = std::string(name);
    spec.coverage_ratio = coverage;
    spec.content_slot_count = 6;
    spec.style_seed = fnv1a64(name);
    return spec;
}

LayoutTemplate preset_template(std::string_view name) { return build_template(preset_spec(name)); }
LayoutTemplate preset_detail_template(std::string_view name) { return build_detail_template(preset_spec(name)); }

// ---- corpus ----

namespace {

// 3x5 digit font, row-major bits
constexpr std::uint16_t kDigitFont[10] = {
    0b111101101101111, 0b010110010010111, 0b111001111100111, 0b111001111001111, 0b101101111001001,
    0b111100111001111, 0b111100111101111, 0b111001010010010, 0b111101111101111, 0b111101111001111,
};

bool digit_bit(int d, int r, int c) {
    return (kDigitFont[d] >> (14 - (r * 3 + c))) & 1;
}

void draw_price(Raster& g, int price, int y0, int x0, double ink) {
    int digits[4] = {(price / 1000) % 10, (price / 100) % 10, (price / 10) % 10, price % 10};
    for (int k = 0; k < 4; ++k)
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 3; ++c)
                if (digit_bit(digits[k], r, c))
                    for (int ch = 0; ch < 3; ++ch) g.at(y0 + r, x0 + k * 4 + c, ch) = ink;
}

bool hash_bit(std::uint64_t bits, int r, int c) {
    return (bits >> ((r % 8) * 8 + (c % 8))) & 1;
}

Raster make_glyph(const std::string& label, std::int64_t id, int price, double accent) {
    Raster g(kGlyphH, kGlyphW, 3, 0.96);
    const std::uint64_t label_bits = fnv1a64(label);
    std::uint64_t sm = static_cast<std::uint64_t>(id) * 0x9e3779b97f4a7c15ULL + 0x1234567;
    const std::uint64_t salt_bits = splitmix64(sm);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            const double lv = hash_bit(label_bits, r, c) ? 0.08 : 0.92;
            const double sv = hash_bit(salt_bits, r, c) ? 0.35 : 0.85;
            for (int ch = 0; ch < 3; ++ch) {
                g.at(r, c, ch) = lv;          // label pattern cell
                g.at(r, c + 8, ch) = sv;      // per-item salt cell
                g.at(r, c + 16, ch) = accent; // flat accent cell
            }
        }
    draw_price(g, price, 9, 2, 0.15);
    for (int x = 0; x < kGlyphW; ++x)
        for (int ch = 0; ch < 3; ++ch) g.at(kGlyphH - 1, x, ch) = 0.45;
    return g;
}

} // namespace

const ContentItem& ContentCorpus::by_id(std::int64_t id) const {
    const std::int64_t base = static_cast<std::int64_t>(pool) * 100000;
    const std::int64_t idx = id - base;
    if (idx < 0 || static_cast<std::size_t>(idx) >= items.size())
        throw CorpusTooSmall("item id " + std::to_string(id) + " not in " + pool_name(pool) + " corpus");
    return items[static_cast<std::size_t>(idx)];
}

ContentCorpus generate_corpus(std::uint64_t seed, std::size_t size, Pool pool) {
    ContentCorpus corpus;
    corpus.pool = pool;
    corpus.seed = seed;
    Rng rng(seed);
    const auto labels = vocab().label_words(pool);
    std::vector<std::size_t> label_order(labels.size());
    std::iota(label_order.begin(), label_order.end(), 0);
    for (std::size_t i = label_order.size(); i > 1; --i)
        std::swap(label_order[i - 1], label_order[rng.below(i)]);

    const std::int64_t id_base = static_cast<std::int64_t>(pool) * 100000;
    const int price_base = 1000 + 2000 * static_cast<int>(pool);
    corpus.items.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        ContentItem item;
        item.id = id_base + static_cast<std::int64_t>(i);
        item.label = labels[label_order[i % labels.size()]];
        item.price = price_base + static_cast<int>(i);
        item.glyph = make_glyph(item.label, item.id, item.price, 0.5 + 0.4 * rng.next_double());
        corpus.items.push_back(std::move(item));
    }
    return corpus;
}

// ---- page composition ----

PageInstance compose_page(std::shared_ptr<const LayoutTemplate> tmpl, const ContentCorpus& corpus, Rng& rng) {
    const auto eligible = tmpl->eligible_slots();
    const auto content = tmpl->content_slots();
    const std::size_t item_slots = eligible.size() + content.size() - 1;
    if (corpus.items.size() < eligible.size() + content.size())
        throw CorpusTooSmall(tmpl->site_name + ": need " + std::to_string(eligible.size() + content.size()) +
                             " items, corpus has " + std::to_string(corpus.items.size()));

    PageInstance page;
    page.tmpl = std::move(tmpl);
    page.pool = corpus.pool;
    page.slot_items.assign(page.tmpl->slots.size(), kNoItem);
    page.trigger_slot = eligible[rng.below(eligible.size())];
    page.slot_items[page.trigger_slot] = kTriggerItem;

    std::vector<std::size_t> order(corpus.items.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);

    std::set<std::string> used_labels;
    std::size_t cursor = 0;
    auto next_distinct = [&]() -> std::int64_t {
        while (cursor < order.size()) {
            const auto& it = corpus.items[order[cursor++]];
            if (used_labels.insert(it.label).second) return it.id;
        }
        throw CorpusTooSmall(page.tmpl->site_name + ": not enough distinct labels");
    };
    for (std::size_t s : content) page.slot_items[s] = next_distinct();
    for (std::size_t s : eligible)
        if (s != page.trigger_slot) page.slot_items[s] = next_distinct();
    (void)item_slots;
    return page;
}

// ---- rendering ----

namespace {

void blit_nn(Raster& dst, const Raster& src, const SlotRect& r) {
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) {
            const int sy = r.h == src.h ? y : y * src.h / r.h;
            const int sx = r.w == src.w ? x : x * src.w / r.w;
            for (int c = 0; c < 3; ++c) dst.at(r.y + y, r.x + x, c) = src.at(sy, sx, c);
        }
}

void paint_banner(Raster& canvas, const LayoutTemplate& t, const SlotRect& r) {
    const std::uint64_t name_bits = fnv1a64(t.site_name);
    for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x) {
            std::uint64_t sm = name_bits + static_cast<std::uint64_t>(x / 6);
            const double v = (splitmix64(sm) & 1) ? 0.28 : 0.62;
            for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = v * t.tint[c];
        }
}

void paint_nav(Raster& canvas, const LayoutTemplate& t, const SlotRect& r) {
    for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x) {
            double v;
            if (t.detail_layout)
                v = (x % 12 < 2) ? 0.85 : 0.18; // inverted strip marks detail pages
            else
                v = (x % 12 < 2) ? 0.30 : t.bg_shade * 0.78;
            for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = v * t.tint[c];
        }
}

void paint_frame(Raster& canvas, const SlotRect& r, double shade) {
    for (int x = r.x; x < r.x + r.w; ++x)
        for (int c = 0; c < 3; ++c) {
            canvas.at(r.y, x, c) = shade;
            canvas.at(r.y + r.h - 1, x, c) = shade;
        }
    for (int y = r.y; y < r.y + r.h; ++y)
        for (int c = 0; c < 3; ++c) {
            canvas.at(y, r.x, c) = shade;
            canvas.at(y, r.x + r.w - 1, c) = shade;
        }
}

Raster paint_base(const PageInstance& page, const ContentCorpus& corpus) {
    const LayoutTemplate& t = *page.tmpl;
    Raster canvas(t.canvas_h, t.canvas_w, 3);
    for (int y = 0; y < t.canvas_h; ++y)
        for (int x = 0; x < t.canvas_w; ++x)
            for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = t.bg_shade * t.tint[c];

    for (std::size_t i = 0; i < t.slots.size(); ++i) {
        const SlotRect& r = t.slots[i];
        switch (r.role) {
            case SlotRole::Banner: paint_banner(canvas, t, r); break;
            case SlotRole::Nav: paint_nav(canvas, t, r); break;
            case SlotRole::Content:
                if (page.slot_items[i] >= 0) blit_nn(canvas, corpus.by_id(page.slot_items[i]).glyph, r);
                break;
            case SlotRole::TriggerEligible:
                if (page.slot_items[i] >= 0) {
                    blit_nn(canvas, corpus.by_id(page.slot_items[i]).glyph, r);
                    paint_frame(canvas, r, t.border_shade);
                } else if (page.slot_items[i] == kTriggerItem) {
                    for (int y = r.y; y < r.y + r.h; ++y)
                        for (int x = r.x; x < r.x + r.w; ++x)
                            for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = 0.0;
                }
                break;
        }
    }
    return canvas;
}

} // namespace

RenderPlan render_plan(const PageInstance& page, const ContentCorpus& corpus, int trigger_h, int trigger_w) {
    RenderPlan plan;
    plan.base = paint_base(page, corpus);
    plan.trigger_h = trigger_h;
    plan.trigger_w = trigger_w;
    const LayoutTemplate& t = *page.tmpl;
    const SlotRect& r = t.slots[page.trigger_slot];

    plan.mask.h = t.canvas_h;
    plan.mask.w = t.canvas_w;
    plan.mask.m.assign(static_cast<std::size_t>(t.canvas_h) * t.canvas_w, 0);
    plan.trigger_map.reserve(static_cast<std::size_t>(r.w) * r.h * 3);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) {
            const int sy = r.h == trigger_h ? y : y * trigger_h / r.h;
            const int sx = r.w == trigger_w ? x : x * trigger_w / r.w;
            plan.mask.m[static_cast<std::size_t>(r.y + y) * t.canvas_w + (r.x + x)] = 1;
            for (int c = 0; c < 3; ++c) {
                const std::size_t dst = (static_cast<std::size_t>(r.y + y) * t.canvas_w + (r.x + x)) * 3 +
                                        static_cast<std::size_t>(c);
                const std::size_t src = (static_cast<std::size_t>(sy) * trigger_w + sx) * 3 +
                                        static_cast<std::size_t>(c);
                plan.trigger_map.emplace_back(dst, src);
            }
        }
    return plan;
}

std::pair<Raster, PixelMask> render_page(const PageInstance& page, const ContentCorpus& corpus,
                                         const Raster& trigger) {
    RenderPlan plan = render_plan(page, corpus, trigger.h, trigger.w);
    Raster out = std::move(plan.base);
    for (const auto& [dst, src] : plan.trigger_map) out.px[dst] = trigger.px[src];
    return {std::move(out), std::move(plan.mask)};
}

num::Tensor render_to_tensor(const RenderPlan& plan, const num::Tensor& trigger) {
    if (trigger.size() != static_cast<std::size_t>(plan.trigger_h) * plan.trigger_w * 3)
        throw num::ShapeMismatch("render_to_tensor: trigger dims");
    num::Tensor base = num::Tensor::from(
        {static_cast<std::size_t>(plan.base.h), static_cast<std::size_t>(plan.base.w), 3}, plan.base.px);
    return num::overlay(base, trigger, plan.trigger_map);
}

TokenMask resize_mask_to_tokens(const PixelMask& pm, int grid_rows, int grid_cols, int patch_px) {
    if (pm.h != grid_rows * patch_px || pm.w != grid_cols * patch_px)
        throw num::ShapeMismatch("resize_mask_to_tokens: mask " + std::to_string(pm.h) + "x" +
                                 std::to_string(pm.w) + " vs grid");
    if (pm.count_ones() == 0) throw EmptyMask("pixel mask has no nonzero entries");
    TokenMask tm;
    tm.rows = grid_rows;
    tm.cols = grid_cols;
    tm.m.assign(static_cast<std::size_t>(grid_rows) * grid_cols, 0);
    for (int i = 0; i < grid_rows; ++i)
        for (int j = 0; j < grid_cols; ++j) {
            bool hit = false;
            for (int y = i * patch_px; y < (i + 1) * patch_px && !hit; ++y)
                for (int x = j * patch_px; x < (j + 1) * patch_px && !hit; ++x)
                    hit = pm.m[static_cast<std::size_t>(y) * pm.w + x] != 0;
            tm.m[static_cast<std::size_t>(i) * grid_cols + j] = hit ? 1 : 0;
        }
    return tm;
}

// ---- instruction and history generators ----

std::string generate_instruction(const PageInstance& page, const ContentCorpus& corpus, Rng& rng) {
    const auto content = page.tmpl->content_slots();
    std::vector<std::size_t> with_items;
    for (std::size_t s : content)
        if (page.slot_items[s] >= 0) with_items.push_back(s);
    if (with_items.empty()) throw CorpusTooSmall("page has no non-trigger items to reference");

    const bool ordinal_allowed = page.pool == Pool::Train && with_items.size() >= 3 && !page.tmpl->detail_layout;
    if (ordinal_allowed && rng.next_double() < 0.2) {
        static const char* verbs[] = {"click", "open", "select"};
        static const char* ords[] = {"first", "second", "third"};
        const int k = static_cast<int>(rng.below(3));
        return std::string(verbs[rng.below(3)]) + " the " + ords[k] + " item";
    }
    const std::size_t slot = with_items[rng.below(with_items.size())];
    const std::string& label = corpus.by_id(page.slot_items[slot]).label;
    switch (rng.below(6)) {
        case 0: return "click the item labeled " + label;
        case 1: return "select the item labeled " + label;
        case 2: return "open the item labeled " + label;
        case 3: return "click the " + label + " item";
        case 4: return "press the " + label + " item";
        default: return "choose the " + label + " item";
    }
}

namespace {

std::string history_click(Rng& rng, Pool pool) {
    const int base = 20 + 20 * static_cast<int>(pool);
    return "click [" + std::to_string(base + static_cast<int>(rng.below(20))) + "]";
}

} // namespace

std::vector<std::string> sample_history(Rng& rng, Pool pool) {
    const std::size_t len = rng.below(11);
    std::vector<std::string> out;
    out.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
        if (i == 0) {
            // first action is always pool-marked, keeping non-empty histories
            // disjoint across pools
            if (rng.next_double() < 0.7) out.push_back(history_click(rng, pool));
            else out.push_back("goto [" + vocab().partner_url(pool) + "]");
        } else {
            const double u = rng.next_double();
            if (u < 0.55) out.push_back(history_click(rng, pool));
            else if (u < 0.70) out.push_back("goto [" + vocab().partner_url(pool) + "]");
            else if (u < 0.90) out.push_back("scroll");
            else out.push_back("stop");
        }
    }
    return out;
}

Environment sample_environment(std::shared_ptr<const LayoutTemplate> tmpl, const ContentCorpus& corpus,
                               const Raster& trigger, Rng& rng) {
    Environment e;
    e.page = compose_page(std::move(tmpl), corpus, rng);
    auto [shot, mask] = render_page(e.page, corpus, trigger);
    e.shot = std::move(shot);
    e.mask = std::move(mask);
    e.instruction = generate_instruction(e.page, corpus, rng);
    e.history = sample_history(rng, corpus.pool);
    return e;
}

EnvironmentPlan sample_environment_plan(std::shared_ptr<const LayoutTemplate> tmpl, const ContentCorpus& corpus,
                                        int trigger_h, int trigger_w, Rng& rng) {
    EnvironmentPlan e;
    e.page = compose_page(std::move(tmpl), corpus, rng);
    e.plan = render_plan(e.page, corpus, trigger_h, trigger_w);
    e.instruction = generate_instruction(e.page, corpus, rng);
    e.history = sample_history(rng, corpus.pool);
    return e;
}

Raster apply_plan(const RenderPlan& plan, const Raster& trigger) {
    if (trigger.h != plan.trigger_h || trigger.w != plan.trigger_w || trigger.channels != 3)
        throw num::ShapeMismatch("apply_plan: trigger dims");
    Raster out = plan.base;
    for (const auto& [dst, src] : plan.trigger_map) out.px[dst] = trigger.px[src];
    return out;
}

// ---- handle ----

const EnvHandle::Site& EnvHandle::site(std::string_view name) const {
    for (const auto& s : sites)
        if (s.name == name) return s;
    throw InfeasibleLayout("unknown site '" + std::string(name) + "'");
}

EnvHandle make_env_handle(std::uint64_t data_seed, std::size_t corpus_size) {
    EnvHandle h;
    for (const auto& name : preset_names()) {
        EnvHandle::Site s;
        s.name = name;
        s.listing = std::make_shared<const LayoutTemplate>(preset_template(name));
        s.detail = std::make_shared<const LayoutTemplate>(preset_detail_template(name));
        h.sites.push_back(std::move(s));
    }
    Rng rng(data_seed);
    h.pools[0] = generate_corpus(rng.substream("corpus-train").next_u64(), corpus_size, Pool::Train);
    h.pools[1] = generate_corpus(rng.substream("corpus-val").next_u64(), corpus_size, Pool::Val);
    h.pools[2] = generate_corpus(rng.substream("corpus-test").next_u64(), corpus_size, Pool::Test);
    return h;
}

Raster make_trigger_base(std::uint64_t seed, int h, int w) {
    Rng rng(seed);
    Raster img(h, w, 3);
    double fx[3], fy[3], ph[3], gx[3], gy[3], ph2[3];
    for (int c = 0; c < 3; ++c) {
        fx[c] = rng.uniform(0.5, 2.0);
        fy[c] = rng.uniform(0.5, 2.0);
        ph[c] = rng.uniform(0.0, 6.28318);
        gx[c] = rng.uniform(2.0, 4.0);
        gy[c] = rng.uniform(2.0, 4.0);
        ph2[c] = rng.uniform(0.0, 6.28318);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double u = static_cast<double>(x) / w, v = static_cast<double>(y) / h;
                double val = 0.5 + 0.22 * std::sin(6.28318 * (fx[c] * u + fy[c] * v) + ph[c]) +
                             0.12 * std::sin(6.28318 * (gx[c] * u + gy[c] * v) + ph2[c]);
                val = std::clamp(val, 0.08, 0.92);
                // snap to the 8-bit grid so PPM export round-trips exactly
                img.at(y, x, c) = std::round(val * 255.0) / 255.0;
            }
    return img;
}

} // namespace eia::env
