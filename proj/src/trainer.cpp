#include "eia/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace eia::train {

using agent::Model;
using env::EnvHandle;

std::string rulebook_gold(const env::PageInstance& page, const env::ContentCorpus& corpus,
                          const std::string& instruction) {
    const Vocabulary& v = vocab();
    if (page.tmpl->detail_layout) return "stop";

    const auto ids = v.tokenize(instruction);
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int id : ids) words.push_back(v.word(id));

    for (std::size_t i = 0; i < words.size(); ++i)
        if (words[i] == "site" && i + 1 < words.size())
            for (Pool p : {Pool::Train, Pool::Val, Pool::Test})
                if (v.partner_word(p) == words[i + 1]) return "goto [" + v.partner_url(p) + "]";

    auto slot_of_label = [&](const std::string& label) -> std::string {
        for (std::size_t s : page.tmpl->content_slots())
            if (page.slot_items[s] >= 0 && corpus.by_id(page.slot_items[s]).label == label)
                return "click [" + std::to_string(s) + "]";
        throw EmptySet("instruction references label '" + label + "' absent from page");
    };

    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i] == "labeled" && i + 1 < words.size()) return slot_of_label(words[i + 1]);
        if ((words[i] == "first" || words[i] == "second" || words[i] == "third")) {
            const std::size_t k = words[i] == "first" ? 0 : words[i] == "second" ? 1 : 2;
            const auto content = page.tmpl->content_slots();
            if (k >= content.size()) throw EmptySet("ordinal beyond page content");
            return "click [" + std::to_string(content[k]) + "]";
        }
    }
    // "<verb> the <label> item" form
    for (std::size_t i = 0; i + 1 < words.size(); ++i)
        if (words[i] == "the" && words[i + 1] != "item") {
            for (Pool p : {Pool::Train, Pool::Val, Pool::Test})
                for (const auto& lw : v.label_words(p))
                    if (lw == words[i + 1]) return slot_of_label(words[i + 1]);
        }
    throw EmptySet("no rule matches instruction '" + instruction + "'");
}

namespace {

// trigger slots hold an ordinary pool item during benign pretraining; the
// attacker's image only exists at attack/evaluation time
Raster training_trigger_fill(const env::ContentCorpus& corpus, Rng& rng) {
    return corpus.items[rng.below(corpus.items.size())].glyph;
}

TrainTask make_listing_task(const EnvHandle::Site& site,
                            const env::ContentCorpus& corpus, Rng& rng) {
    TrainTask t;
    t.page = env::compose_page(site.listing, corpus, rng);
    auto [shot, mask] = env::render_page(t.page, corpus, training_trigger_fill(corpus, rng));
    t.shot = std::move(shot);
    t.instruction = env::generate_instruction(t.page, corpus, rng);
    t.history = env::sample_history(rng, corpus.pool);
    t.gold_action = rulebook_gold(t.page, corpus, t.instruction);
    return t;
}

TrainTask make_nav_task(const EnvHandle::Site& site,
                        const env::ContentCorpus& corpus, Rng& rng) {
    TrainTask t;
    t.page = env::compose_page(site.listing, corpus, rng);
    auto [shot, mask] = env::render_page(t.page, corpus, training_trigger_fill(corpus, rng));
    t.shot = std::move(shot);
    static const char* verbs[] = {"visit", "open", "goto"};
    t.instruction = std::string(verbs[rng.below(3)]) + " the site " + vocab().partner_word(corpus.pool);
    t.history = env::sample_history(rng, corpus.pool);
    t.gold_action = rulebook_gold(t.page, corpus, t.instruction);
    return t;
}

TrainTask make_stop_task(const EnvHandle::Site& site,
                         const env::ContentCorpus& corpus, Rng& rng) {
    TrainTask t;
    t.page = env::compose_page(site.detail, corpus, rng);
    auto [shot, mask] = env::render_page(t.page, corpus, training_trigger_fill(corpus, rng));
    t.shot = std::move(shot);
    t.instruction = env::generate_instruction(t.page, corpus, rng);
    t.history = env::sample_history(rng, corpus.pool);
    // arriving on a detail view implies a just-executed click
    t.history.push_back("click [" + std::to_string(2 + rng.below(7)) + "]");
    t.gold_action = rulebook_gold(t.page, corpus, t.instruction);
    return t;
}

} // namespace

std::vector<TrainTask> gen_training_batch(const EnvHandle& handle, Pool pool, Rng& rng, std::size_t n) {
    const env::ContentCorpus& corpus = handle.corpus(pool);
    std::vector<TrainTask> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& site = handle.sites[rng.below(handle.sites.size())];
        const double u = rng.next_double();
        if (u < 0.62) out.push_back(make_listing_task(site, corpus, rng));
        else if (u < 0.75) out.push_back(make_nav_task(site, corpus, rng));
        else out.push_back(make_stop_task(site, corpus, rng));
    }
    return out;
}

num::Tensor task_loss(const Model& model, const TrainTask& task) {
    const Vocabulary& v = vocab();
    std::vector<int> target = v.tokenize(task.gold_action);
    target.push_back(v.eos());
    auto fr = model.forward(Vocabulary::system_prompt(), task.instruction, task.history, task.shot,
                            std::span<const int>(target.data(), target.size() - 1));
    return num::cross_entropy(fr.resp_logits, target);
}

TrainReport train_agent(Model& model, const EnvHandle& handle, const TrainConfig& cfg) {
    if (cfg.steps < 1) throw DivergenceDetected("steps must be >= 1");
    TrainReport report;
    report.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));

    Rng task_rng = Rng(cfg.seed).substream("train-tasks");
    model.set_trainable(true);
    auto params = model.named_params();

    for (int step = 0; step < cfg.steps; ++step) {
        auto batch = gen_training_batch(handle, Pool::Train, task_rng, static_cast<std::size_t>(cfg.batch));
        for (auto& [name, p] : params) p.zero_grad();

        double loss_value = 0.0;
        {
            num::Tape tape;
            num::Tensor total;
            for (const auto& task : batch) {
                num::Tensor l = task_loss(model, task);
                total = total.defined() ? num::add(total, l) : l;
            }
            total = num::scale(total, 1.0 / static_cast<double>(cfg.batch));
            loss_value = total.item();
            if (!std::isfinite(loss_value))
                throw DivergenceDetected("loss became non-finite at step " + std::to_string(step));
            tape.backward(total);
        }
        report.loss_curve.push_back(loss_value);

        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            auto& g = p.grad();
            double sq = 0.0;
            for (double x : g) sq += x * x;
            const double norm = std::sqrt(sq);
            const double s = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
            auto& w = p.value();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * s * g[i];
        }
    }
    model.set_trainable(false);

    Rng val_rng = Rng(cfg.seed).substream("train-holdout");
    auto holdout = gen_training_batch(handle, Pool::Val, val_rng, 240);
    report.final_benign_accuracy = eval_benign_accuracy(model, holdout);
    return report;
}

double eval_benign_accuracy(const Model& model, std::span<const TrainTask> tasks) {
    if (tasks.empty()) throw EmptySet("no tasks to evaluate");
    std::size_t hits = 0;
    for (const auto& task : tasks) {
        const auto out = model.generate_greedy(task.instruction, task.history, task.shot);
        hits += out.action_text == task.gold_action;
    }
    return static_cast<double>(hits) / static_cast<double>(tasks.size());
}

} // namespace eia::train
