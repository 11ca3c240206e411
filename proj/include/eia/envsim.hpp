// Procedural page environment: layout templates with randomized trigger
// placement, a seeded content corpus, raster rendering with pixel masks,
// instruction and history generators. Every output is a pure function of
// (template, corpus, trigger, seed), so generators can run on disjoint rng
// streams in parallel.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eia/io.hpp"
#include "eia/rng.hpp"
#include "eia/tensor.hpp"
#include "eia/vocab.hpp"

namespace eia::env {

struct InfeasibleLayout : std::runtime_error {
    explicit InfeasibleLayout(const std::string& what) : std::runtime_error("infeasible layout: " + what) {}
};
struct CorpusTooSmall : std::runtime_error {
    explicit CorpusTooSmall(const std::string& what) : std::runtime_error("corpus too small: " + what) {}
};
struct EmptyMask : std::runtime_error {
    explicit EmptyMask(const std::string& what) : std::runtime_error("empty mask: " + what) {}
};

enum class SlotRole { Content, Banner, Nav, TriggerEligible };

struct SlotRect {
    int x = 0, y = 0, w = 0, h = 0;
    SlotRole role = SlotRole::Content;
};

struct LayoutTemplate {
    std::string site_name;
    int canvas_w = 96;
    int canvas_h = 96;
    std::vector<SlotRect> slots;
    double coverage_ratio = 0.05; // declared trigger coverage target
    double bg_shade = 0.90;
    double border_shade = 0.30;
    std::array<double, 3> tint{1.0, 1.0, 1.0};
    bool detail_layout = false;
    std::uint64_t style_seed = 0;

    std::vector<std::size_t> content_slots() const;
    std::vector<std::size_t> eligible_slots() const;
};

struct SiteSpec {
    std::string name;
    double coverage_ratio = 0.05; // must lie in [0.03, 0.12]
    int content_slot_count = 6;
    std::uint64_t style_seed = 0;
};

LayoutTemplate build_template(const SiteSpec& spec);
LayoutTemplate build_detail_template(const SiteSpec& spec);

const std::vector<std::string>& preset_names(); // six site presets
SiteSpec preset_spec(std::string_view name);
LayoutTemplate preset_template(std::string_view name);
LayoutTemplate preset_detail_template(std::string_view name);

// glyph rasters are 16x24x3 (h,w,c)
inline constexpr int kGlyphH = 16;
inline constexpr int kGlyphW = 24;

struct ContentItem {
    std::int64_t id = 0;
    std::string label;
    int price = 0;
    Raster glyph;
};

struct ContentCorpus {
    Pool pool = Pool::Train;
    std::uint64_t seed = 0;
    std::vector<ContentItem> items;
    const ContentItem& by_id(std::int64_t id) const;
};

ContentCorpus generate_corpus(std::uint64_t seed, std::size_t size, Pool pool);

// slot_items: one entry per slot; kNoItem for decorative slots, kTriggerItem
// for the single trigger slot
inline constexpr std::int64_t kNoItem = -1;
inline constexpr std::int64_t kTriggerItem = -2;

struct PageInstance {
    std::shared_ptr<const LayoutTemplate> tmpl;
    std::vector<std::int64_t> slot_items;
    std::size_t trigger_slot = 0;
    std::uint64_t seed = 0;
    Pool pool = Pool::Train;
};

PageInstance compose_page(std::shared_ptr<const LayoutTemplate> tmpl, const ContentCorpus& corpus, Rng& rng);

struct PixelMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> m;
    std::size_t count_ones() const;
};

struct TokenMask {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> m;
    std::size_t count_ones() const;
};

// Prepared render with the trigger region left blank plus the
// nearest-neighbor index map canvas-pixel <- trigger-pixel. One plan serves
// both the plain raster path and the differentiable tensor path, so attack
// and evaluation see identical renders.
struct RenderPlan {
    Raster base;
    std::vector<std::pair<std::size_t, std::size_t>> trigger_map;
    PixelMask mask;
    int trigger_h = 0, trigger_w = 0;
};

RenderPlan render_plan(const PageInstance& page, const ContentCorpus& corpus, int trigger_h, int trigger_w);
std::pair<Raster, PixelMask> render_page(const PageInstance& page, const ContentCorpus& corpus,
                                         const Raster& trigger);
num::Tensor render_to_tensor(const RenderPlan& plan, const num::Tensor& trigger);

// token (i,j) = 1 iff its patch rectangle shares at least one pixel with the
// mask's nonzero region
TokenMask resize_mask_to_tokens(const PixelMask& pm, int grid_rows, int grid_cols, int patch_px);

std::string generate_instruction(const PageInstance& page, const ContentCorpus& corpus, Rng& rng);
std::vector<std::string> sample_history(Rng& rng, Pool pool);

struct Environment {
    PageInstance page;
    Raster shot;
    PixelMask mask;
    std::string instruction;
    std::vector<std::string> history;
};

Environment sample_environment(std::shared_ptr<const LayoutTemplate> tmpl, const ContentCorpus& corpus,
                               const Raster& trigger, Rng& rng);

// same composition and rng consumption as sample_environment, but the render
// stays a plan so the trigger can be applied repeatedly (raster or tensor)
struct EnvironmentPlan {
    PageInstance page;
    RenderPlan plan;
    std::string instruction;
    std::vector<std::string> history;
};
EnvironmentPlan sample_environment_plan(std::shared_ptr<const LayoutTemplate> tmpl, const ContentCorpus& corpus,
                                        int trigger_h, int trigger_w, Rng& rng);
Raster apply_plan(const RenderPlan& plan, const Raster& trigger);

// Per-run bundle of all site templates plus the three disjoint corpora.
struct EnvHandle {
    struct Site {
        std::string name;
        std::shared_ptr<const LayoutTemplate> listing;
        std::shared_ptr<const LayoutTemplate> detail;
    };
    std::vector<Site> sites;
    std::array<ContentCorpus, 3> pools;

    const Site& site(std::string_view name) const;
    const ContentCorpus& corpus(Pool p) const { return pools[static_cast<std::size_t>(p)]; }
};

EnvHandle make_env_handle(std::uint64_t data_seed, std::size_t corpus_size = 512);

// deterministic benign-looking image at trigger-native resolution
Raster make_trigger_base(std::uint64_t seed, int h, int w);
inline constexpr int kTriggerNativeH = 24;
inline constexpr int kTriggerNativeW = 32;

} // namespace eia::env
