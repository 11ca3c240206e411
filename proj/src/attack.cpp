#include "eia/attack.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "eia/rng.hpp"
#include "eia/vocab.hpp"

namespace eia::attack {

using agent::Model;
using env::EnvHandle;

void AttackConfig::validate() const {
    if (!(alpha > 0.0) || alpha > epsilon) throw NonFiniteLoss("require 0 < alpha <= epsilon");
    if (lambda < 0.0) throw NonFiniteLoss("lambda must be >= 0");
    if (steps < 1) throw NonFiniteLoss("steps must be >= 1");
    if (trigger_h <= 0 || trigger_w <= 0) throw NonFiniteLoss("trigger dims must be positive");
}

Raster TriggerArtifact::adversarial() const {
    Raster out = base;
    for (std::size_t i = 0; i < out.px.size(); ++i)
        out.px[i] = std::clamp(out.px[i] + delta[i], 0.0, 1.0);
    return out;
}

void TriggerArtifact::check_box() const {
    if (delta.size() != base.px.size()) throw NonFiniteLoss("delta dims do not match base");
    for (std::size_t i = 0; i < delta.size(); ++i) {
        if (std::fabs(delta[i]) > epsilon + 1e-12)
            throw NonFiniteLoss("delta exceeds the epsilon box at pixel " + std::to_string(i));
        const double v = base.px[i] + delta[i];
        if (v < -1e-12 || v > 1.0 + 1e-12)
            throw NonFiniteLoss("base+delta leaves [0,1] at pixel " + std::to_string(i));
    }
}

std::uint64_t TriggerArtifact::content_hash() const {
    std::uint64_t h = fnv1a64(base.px.data(), base.px.size() * sizeof(double));
    h ^= fnv1a64(delta.data(), delta.size() * sizeof(double));
    return h;
}

AbhParts attention_ratio_loss(const num::Tensor& attention_map, const env::TokenMask& tm) {
    const std::size_t n = static_cast<std::size_t>(tm.rows) * tm.cols;
    if (attention_map.size() != n)
        throw num::ShapeMismatch("attention map size " + std::to_string(attention_map.size()) +
                                 " vs token mask " + std::to_string(n));
    const std::size_t ones = tm.count_ones();
    if (ones == 0 || ones == n)
        throw DegenerateMask("token mask must contain both ones and zeros, has " + std::to_string(ones) +
                             " of " + std::to_string(n));

    std::vector<double> in_mask(n), out_mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        in_mask[i] = tm.m[i] ? 1.0 : 0.0;
        out_mask[i] = tm.m[i] ? 0.0 : 1.0;
    }
    num::Tensor flat = num::reshape(attention_map, {n});
    AbhParts parts;
    parts.a_in = num::scale(num::sum_all(num::mul(flat, num::Tensor::from({n}, in_mask))),
                            1.0 / static_cast<double>(ones));
    parts.a_out = num::scale(num::sum_all(num::mul(flat, num::Tensor::from({n}, out_mask))),
                             1.0 / static_cast<double>(n - ones));
    // Eq-singularity guard: the ratio denominator is floored once the model
    // fully ignores the trigger region
    parts.loss = num::div(parts.a_out, num::clamp_min(parts.a_in, 1e-8));
    return parts;
}

JointParts joint_loss(const num::Tensor& resp_logits, std::span<const int> target_ids,
                      const num::Tensor& attention_map, const env::TokenMask& tm, double lambda) {
    JointParts parts;
    parts.ce = num::cross_entropy(resp_logits, target_ids);
    AbhParts abh = attention_ratio_loss(attention_map, tm);
    parts.attn = abh.loss;
    parts.a_in = abh.a_in;
    parts.a_out = abh.a_out;
    parts.total = num::add(parts.ce, num::scale(parts.attn, lambda));
    return parts;
}

std::vector<double> pgd_update(const std::vector<double>& delta, const std::vector<double>& grad,
                               const AttackConfig& cfg, const Raster& base) {
    if (delta.size() != grad.size() || delta.size() != base.px.size())
        throw num::ShapeMismatch("pgd_update: delta/grad/base sizes differ");
    std::vector<double> out(delta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double sgn = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        double d = std::clamp(delta[i] - cfg.alpha * sgn, -cfg.epsilon, cfg.epsilon);
        d = std::clamp(d, -base.px[i], 1.0 - base.px[i]);
        out[i] = d;
    }
    return out;
}

namespace {

struct PreparedEnv {
    env::EnvironmentPlan plan_env;
    env::TokenMask token_mask;
};

PreparedEnv prepare_env(const EnvHandle::Site& site, const env::ContentCorpus& corpus,
                        const agent::ModelConfig& mc, const AttackConfig& cfg, Rng& rng) {
    PreparedEnv p;
    p.plan_env = env::sample_environment_plan(site.listing, corpus, cfg.trigger_h, cfg.trigger_w, rng);
    p.token_mask = env::resize_mask_to_tokens(p.plan_env.plan.mask, mc.grid_rows, mc.grid_cols, mc.patch_px);
    return p;
}

double validation_asr(const Model& model, std::span<const PreparedEnv> envs, const Raster& adversarial,
                      const std::string& target_action) {
    if (envs.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : envs) {
        Raster shot = env::apply_plan(e.plan_env.plan, adversarial);
        const auto out = model.generate_greedy(e.plan_env.instruction, e.plan_env.history, shot);
        hits += out.action_text == target_action;
    }
    return static_cast<double>(hits) / static_cast<double>(envs.size());
}

// one blank-canvas environment: flat background, trigger at the first
// eligible slot, fixed instruction, no history
PreparedEnv blank_env(const EnvHandle::Site& site, const agent::ModelConfig& mc, const AttackConfig& cfg) {
    PreparedEnv p;
    const env::LayoutTemplate& t = *site.listing;
    const auto elig = t.eligible_slots();
    const env::SlotRect& r = t.slots[elig[0]];

    p.plan_env.instruction = "click the first item";
    p.plan_env.plan.base = Raster(t.canvas_h, t.canvas_w, 3, 0.9);
    p.plan_env.plan.trigger_h = cfg.trigger_h;
    p.plan_env.plan.trigger_w = cfg.trigger_w;
    p.plan_env.plan.mask.h = t.canvas_h;
    p.plan_env.plan.mask.w = t.canvas_w;
    p.plan_env.plan.mask.m.assign(static_cast<std::size_t>(t.canvas_h) * t.canvas_w, 0);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) {
            const int sy = r.h == cfg.trigger_h ? y : y * cfg.trigger_h / r.h;
            const int sx = r.w == cfg.trigger_w ? x : x * cfg.trigger_w / r.w;
            p.plan_env.plan.mask.m[static_cast<std::size_t>(r.y + y) * t.canvas_w + (r.x + x)] = 1;
            for (int c = 0; c < 3; ++c)
                p.plan_env.plan.trigger_map.emplace_back(
                    (static_cast<std::size_t>(r.y + y) * t.canvas_w + (r.x + x)) * 3 + c,
                    (static_cast<std::size_t>(sy) * cfg.trigger_w + sx) * 3 + c);
        }
    p.token_mask = env::resize_mask_to_tokens(p.plan_env.plan.mask, mc.grid_rows, mc.grid_cols, mc.patch_px);
    return p;
}

AttackResult run_pgd(const Model& model, const EnvHandle& handle, std::string_view site_name,
                     const Raster& base, const AttackConfig& cfg, bool blank_context, std::string arm) {
    cfg.validate();
    if (base.h != cfg.trigger_h || base.w != cfg.trigger_w || base.channels != 3)
        throw num::ShapeMismatch("trigger base dims do not match the attack config");
    const agent::ModelConfig& mc = model.config();
    const auto& site = handle.site(site_name);
    const env::ContentCorpus& train_corpus = handle.corpus(Pool::Train);
    const env::ContentCorpus& val_corpus = handle.corpus(Pool::Val);
    const Vocabulary& v = vocab();

    std::vector<int> target = v.tokenize(cfg.target_action);
    target.push_back(v.eos());

    Rng root(cfg.seed);
    Rng env_rng = root.substream("attack-env");
    Rng pick_rng = root.substream("attack-pick");
    Rng val_rng = root.substream("attack-val");

    std::vector<PreparedEnv> fixed_set;
    if (blank_context) {
        fixed_set.push_back(blank_env(site, mc, cfg));
    } else if (cfg.fixed_contexts > 0) {
        for (int i = 0; i < cfg.fixed_contexts; ++i)
            fixed_set.push_back(prepare_env(site, train_corpus, mc, cfg, env_rng));
    }
    std::vector<PreparedEnv> val_envs;
    if (cfg.early_stop) {
        for (int i = 0; i < cfg.val_size; ++i)
            val_envs.push_back(prepare_env(site, val_corpus, mc, cfg, val_rng));
    }

    AttackResult result;
    result.artifact.base = base;
    result.artifact.delta.assign(base.px.size(), 0.0);
    result.artifact.epsilon = cfg.epsilon;
    result.artifact.lambda = cfg.lambda;
    result.artifact.target_action = cfg.target_action;
    result.artifact.arm = std::move(arm);
    result.artifact.seed = cfg.seed;

    num::Tensor base_t = num::Tensor::from(
        {static_cast<std::size_t>(base.h), static_cast<std::size_t>(base.w), 3}, base.px);

    double best_val = -1.0;
    int evals_since_improvement = 0;
    int steps_run = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        const PreparedEnv* e;
        PreparedEnv fresh;
        if (!fixed_set.empty()) {
            e = &fixed_set[fixed_set.size() == 1 ? 0 : pick_rng.below(fixed_set.size())];
        } else {
            fresh = prepare_env(site, train_corpus, mc, cfg, env_rng);
            e = &fresh;
        }

        num::Tensor delta_t = num::Tensor::from(base_t.shape(), result.artifact.delta, true);
        num::Tape tape;
        num::Tensor trig_t = num::add(base_t, delta_t);
        num::Tensor shot_t = env::render_to_tensor(e->plan_env.plan, trig_t);
        auto fr = model.forward(Vocabulary::system_prompt(), e->plan_env.instruction, e->plan_env.history,
                                shot_t, std::span<const int>(target.data(), target.size() - 1));
        num::Tensor amap = agent::attention_map_tensor(fr, mc);
        JointParts joint = joint_loss(fr.resp_logits, target, amap, e->token_mask, cfg.lambda);

        TraceRow row;
        row.step = step;
        row.ce = joint.ce.item();
        row.attn = joint.attn.item();
        row.a_in = joint.a_in.item();
        row.a_out = joint.a_out.item();
        if (!std::isfinite(joint.total.item()) || !std::isfinite(row.ce) || !std::isfinite(row.attn))
            throw NonFiniteLoss("step " + std::to_string(step) + ": ce=" + std::to_string(row.ce) +
                                " attn=" + std::to_string(row.attn));
        result.trace.push_back(row);

        tape.backward(joint.total);
        result.artifact.delta = pgd_update(result.artifact.delta, delta_t.grad(), cfg, base);
        result.artifact.check_box();
        steps_run = step + 1;

        if (cfg.early_stop && (step + 1) % cfg.val_every == 0) {
            const double asr = validation_asr(model, val_envs, result.artifact.adversarial(),
                                              cfg.target_action);
            result.val_asr.emplace_back(step + 1, asr);
            if (asr > best_val + 1e-12) {
                best_val = asr;
                evals_since_improvement = 0;
            } else {
                ++evals_since_improvement;
            }
            if (evals_since_improvement >= cfg.plateau_patience) break;
        }
    }
    result.artifact.steps_run = steps_run;
    result.artifact.check_box();
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(model.weights_hash()));
    result.artifact.model_hash = buf;
    return result;
}

} // namespace

AttackResult optimize_trigger(const Model& model, const EnvHandle& handle, std::string_view site,
                              const Raster& base, const AttackConfig& cfg) {
    return run_pgd(model, handle, site, base, cfg, false,
                   cfg.fixed_contexts > 0 ? "fixed_ctx" : (cfg.lambda == 0.0 ? "ce_only" : "full"));
}

AttackResult baseline_pgd(const Model& model, const EnvHandle& handle, std::string_view site,
                          const Raster& base, const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.lambda = 0.0;
    c.fixed_contexts = 0;
    return run_pgd(model, handle, site, base, c, true, "baseline");
}

// ---- persistence ----

void save_artifact(const std::string& dir, const TriggerArtifact& art) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_ppm(dir + "/base.ppm", art.base);
    write_doubles(dir + "/delta.f64", art.delta);
    nlohmann::json j;
    j["epsilon"] = art.epsilon;
    j["lambda"] = art.lambda;
    j["steps_run"] = art.steps_run;
    j["target_action"] = art.target_action;
    j["arm"] = art.arm;
    j["seed"] = art.seed;
    j["config_hash"] = art.config_hash;
    j["model_hash"] = art.model_hash;
    j["trigger_h"] = art.base.h;
    j["trigger_w"] = art.base.w;
    write_file(dir + "/meta.json", j.dump(2) + "\n");
}

TriggerArtifact load_artifact(const std::string& dir) {
    TriggerArtifact art;
    art.base = read_ppm(dir + "/base.ppm");
    art.delta = read_doubles(dir + "/delta.f64");
    const auto j = nlohmann::json::parse(read_file(dir + "/meta.json"));
    art.epsilon = j.at("epsilon").get<double>();
    art.lambda = j.at("lambda").get<double>();
    art.steps_run = j.at("steps_run").get<int>();
    art.target_action = j.at("target_action").get<std::string>();
    art.arm = j.at("arm").get<std::string>();
    art.seed = j.at("seed").get<std::uint64_t>();
    art.config_hash = j.value("config_hash", "");
    art.model_hash = j.value("model_hash", "");
    art.check_box();
    return art;
}

std::string trace_csv(std::span<const TraceRow> rows) {
    std::string out = "step,ce,attn,a_in,a_out\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g\n", r.step, r.ce, r.attn, r.a_in, r.a_out);
        out += buf;
    }
    return out;
}

std::string val_asr_csv(std::span<const std::pair<int, double>> rows) {
    std::string out = "step,val_asr\n";
    char buf[64];
    for (const auto& [step, asr] : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6f\n", step, asr);
        out += buf;
    }
    return out;
}

} // namespace eia::attack
