#include "eia/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "eia/rng.hpp"

namespace eia::agent {

using num::Tensor;

void ModelConfig::validate() const {
    if (grid_rows <= 0 || grid_cols <= 0 || patch_px <= 0 || d_model <= 0 || layers <= 0 || heads <= 0)
        throw DimMismatch("non-positive model dimension");
    if (d_model % heads != 0) throw DimMismatch("d_model not divisible by heads");
    if (static_cast<std::size_t>(vocab_size) < vocab().used_size())
        throw DimMismatch("vocab_size smaller than the closed grammar");
    const int tapped = attn_layer < 0 ? layers + attn_layer : attn_layer;
    if (tapped < 0 || tapped >= layers) throw DimMismatch("attn_layer out of range");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["grid_rows"] = grid_rows;
    j["grid_cols"] = grid_cols;
    j["patch_px"] = patch_px;
    j["d_model"] = d_model;
    j["layers"] = layers;
    j["heads"] = heads;
    j["vocab_size"] = vocab_size;
    j["max_seq_len"] = max_seq_len;
    j["attn_layer"] = attn_layer;
    j["gen_cap"] = gen_cap;
    return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.grid_rows = j.value("grid_rows", c.grid_rows);
    c.grid_cols = j.value("grid_cols", c.grid_cols);
    c.patch_px = j.value("patch_px", c.patch_px);
    c.d_model = j.value("d_model", c.d_model);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.attn_layer = j.value("attn_layer", c.attn_layer);
    c.gen_cap = j.value("gen_cap", c.gen_cap);
    c.validate();
    return c;
}

// ---- patchify ----

std::vector<std::size_t> patch_index_map(const ModelConfig& cfg) {
    const int H = cfg.image_h(), W = cfg.image_w(), P = cfg.patch_px;
    std::vector<std::size_t> idx;
    idx.reserve(static_cast<std::size_t>(H) * W * 3);
    for (int pi = 0; pi < cfg.grid_rows; ++pi)
        for (int pj = 0; pj < cfg.grid_cols; ++pj)
            for (int y = pi * P; y < (pi + 1) * P; ++y)
                for (int x = pj * P; x < (pj + 1) * P; ++x)
                    for (int c = 0; c < 3; ++c)
                        idx.push_back((static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c));
    return idx;
}

num::Tensor patchify(const num::Tensor& screenshot, const ModelConfig& cfg) {
    const std::size_t H = static_cast<std::size_t>(cfg.image_h());
    const std::size_t W = static_cast<std::size_t>(cfg.image_w());
    if (screenshot.shape() != num::Shape{H, W, 3})
        throw DimMismatch("patchify: screenshot " + num::shape_str(screenshot.shape()) + " vs config " +
                          std::to_string(H) + "x" + std::to_string(W) + "x3");
    num::Tensor flat = num::gather(screenshot, patch_index_map(cfg));
    return num::reshape(flat, {static_cast<std::size_t>(cfg.n_image_tokens()),
                               static_cast<std::size_t>(cfg.patch_px) * cfg.patch_px * 3});
}

// ---- init / params ----

namespace {

Tensor randn(num::Shape shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); i += 2) {
        // Box-Muller
        const double u1 = std::max(rng.next_double(), 1e-300);
        const double u2 = rng.next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        t.value()[i] = stddev * r * std::cos(6.283185307179586 * u2);
        if (i + 1 < t.size()) t.value()[i + 1] = stddev * r * std::sin(6.283185307179586 * u2);
    }
    return t;
}

} // namespace

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Rng rng(seed);
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    const auto D = static_cast<std::size_t>(cfg.d_model);
    const auto NM = static_cast<std::size_t>(cfg.n_image_tokens());
    const auto PP = static_cast<std::size_t>(cfg.patch_px) * cfg.patch_px * 3;
    const double sd = 0.02;

    m.tok_emb_ = randn({V, D}, sd, rng);
    m.pos_text_ = randn({static_cast<std::size_t>(cfg.max_seq_len), D}, sd, rng);
    m.pos_img_ = randn({NM, D}, sd, rng);
    m.patch_w_ = randn({PP, D}, sd, rng);
    m.patch_b_ = Tensor::zeros({D});
    for (int l = 0; l < cfg.layers; ++l) {
        LayerWeights lw;
        lw.ln1_g = Tensor::full({D}, 1.0);
        lw.ln1_b = Tensor::zeros({D});
        lw.wq = randn({D, D}, sd, rng);
        lw.bq = Tensor::zeros({D});
        lw.wk = randn({D, D}, sd, rng);
        lw.bk = Tensor::zeros({D});
        lw.wv = randn({D, D}, sd, rng);
        lw.bv = Tensor::zeros({D});
        lw.wo = randn({D, D}, sd, rng);
        lw.bo = Tensor::zeros({D});
        lw.ln2_g = Tensor::full({D}, 1.0);
        lw.ln2_b = Tensor::zeros({D});
        lw.mlp_w1 = randn({D, 4 * D}, sd, rng);
        lw.mlp_b1 = Tensor::zeros({4 * D});
        lw.mlp_w2 = randn({4 * D, D}, sd, rng);
        lw.mlp_b2 = Tensor::zeros({D});
        m.layers_.push_back(std::move(lw));
    }
    m.ln_f_g_ = Tensor::full({D}, 1.0);
    m.ln_f_b_ = Tensor::zeros({D});
    // small head: step-0 logits stay near-uniform, loss ~ ln(vocab)
    m.head_w_ = randn({D, V}, sd, rng);
    m.head_b_ = Tensor::zeros({V});
    return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("pos_text", pos_text_);
    out.emplace_back("pos_img", pos_img_);
    out.emplace_back("patch_w", patch_w_);
    out.emplace_back("patch_b", patch_b_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        auto& lw = layers_[l];
        out.emplace_back(p + "ln1_g", lw.ln1_g);
        out.emplace_back(p + "ln1_b", lw.ln1_b);
        out.emplace_back(p + "wq", lw.wq);
        out.emplace_back(p + "bq", lw.bq);
        out.emplace_back(p + "wk", lw.wk);
        out.emplace_back(p + "bk", lw.bk);
        out.emplace_back(p + "wv", lw.wv);
        out.emplace_back(p + "bv", lw.bv);
        out.emplace_back(p + "wo", lw.wo);
        out.emplace_back(p + "bo", lw.bo);
        out.emplace_back(p + "ln2_g", lw.ln2_g);
        out.emplace_back(p + "ln2_b", lw.ln2_b);
        out.emplace_back(p + "mlp_w1", lw.mlp_w1);
        out.emplace_back(p + "mlp_b1", lw.mlp_b1);
        out.emplace_back(p + "mlp_w2", lw.mlp_w2);
        out.emplace_back(p + "mlp_b2", lw.mlp_b2);
    }
    out.emplace_back("ln_f_g", ln_f_g_);
    out.emplace_back("ln_f_b", ln_f_b_);
    out.emplace_back("head_w", head_w_);
    out.emplace_back("head_b", head_b_);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
    return const_cast<Model*>(this)->named_params();
}

void Model::set_trainable(bool trainable) {
    for (auto& [name, t] : named_params()) t.set_requires_grad(trainable);
}

void Model::save(const std::string& ckpt_path) const {
    num::save_checkpoint(ckpt_path, named_params());
}

Model Model::load(const std::string& ckpt_path, const ModelConfig& cfg) {
    Model m = Model::init(cfg, 0);
    auto loaded = num::load_checkpoint(ckpt_path);
    auto params = m.named_params();
    if (loaded.size() != params.size())
        throw DimMismatch("checkpoint has " + std::to_string(loaded.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (loaded[i].first != params[i].first || loaded[i].second.shape() != params[i].second.shape())
            throw DimMismatch("checkpoint tensor '" + loaded[i].first + "' does not match '" +
                              params[i].first + "'");
        params[i].second.value() = loaded[i].second.value();
    }
    return m;
}

std::uint64_t Model::weights_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : named_params()) {
        h ^= fnv1a64(name);
        h *= 0x100000001b3ULL;
        h ^= fnv1a64(t.value().data(), t.value().size() * sizeof(double));
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---- forward ----

std::vector<int> build_prefix_ids(const std::string& system_prompt, const std::string& instruction,
                                  std::span<const std::string> history) {
    const Vocabulary& v = vocab();
    std::vector<int> ids;
    ids.push_back(v.bos());
    for (int t : v.tokenize(system_prompt)) ids.push_back(t);
    ids.push_back(v.sep());
    for (int t : v.tokenize(instruction)) ids.push_back(t);
    ids.push_back(v.sep());
    for (const auto& action : history) {
        for (int t : v.tokenize(action)) ids.push_back(t);
        ids.push_back(v.sep());
    }
    return ids;
}

ForwardResult Model::forward(const std::string& system_prompt, const std::string& instruction,
                             std::span<const std::string> history, const num::Tensor& screenshot,
                             std::span<const int> response_ids) const {
    const Vocabulary& v = vocab();
    const auto D = static_cast<std::size_t>(cfg_.d_model);
    const auto NM = static_cast<std::size_t>(cfg_.n_image_tokens());
    const int heads = cfg_.heads;
    const std::size_t dh = D / static_cast<std::size_t>(heads);

    std::vector<int> prefix = build_prefix_ids(system_prompt, instruction, history);
    std::vector<int> resp;
    resp.push_back(v.resp());
    resp.insert(resp.end(), response_ids.begin(), response_ids.end());

    SeqLayout layout;
    layout.prefix_len = prefix.size();
    layout.img_start = prefix.size();
    layout.resp_start = layout.img_start + NM;
    layout.total = layout.resp_start + resp.size();
    if (layout.total > static_cast<std::size_t>(cfg_.max_seq_len))
        throw SequenceTooLong(std::to_string(layout.total) + " > max_seq_len " +
                              std::to_string(cfg_.max_seq_len));
    const std::size_t S = layout.total;

    // token + positional embeddings; image block uses its own position table
    std::vector<int> text_pos(prefix.size());
    for (std::size_t i = 0; i < prefix.size(); ++i) text_pos[i] = static_cast<int>(i);
    std::vector<int> resp_pos(resp.size());
    for (std::size_t i = 0; i < resp.size(); ++i) resp_pos[i] = static_cast<int>(layout.resp_start + i);

    Tensor prefix_emb = num::add(num::embedding_lookup(tok_emb_, prefix),
                                 num::embedding_lookup(pos_text_, text_pos));
    Tensor patches = patchify(screenshot, cfg_);
    Tensor img_emb = num::add(num::add_bias(num::matmul(patches, patch_w_), patch_b_), pos_img_);
    Tensor resp_emb = num::add(num::embedding_lookup(tok_emb_, resp),
                               num::embedding_lookup(pos_text_, resp_pos));
    Tensor x = num::concat_rows({prefix_emb, img_emb, resp_emb});

    // additive causal mask; masked logits underflow to exact zeros in softmax
    Tensor mask = Tensor::zeros({S, S});
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = i + 1; j < S; ++j) mask.value()[i * S + j] = -1e30;

    const int tapped = cfg_.attn_layer < 0 ? cfg_.layers + cfg_.attn_layer : cfg_.attn_layer;
    ForwardResult fr;
    fr.layout = layout;

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg_.layers; ++l) {
        const LayerWeights& lw = layers_[static_cast<std::size_t>(l)];
        Tensor h = num::layer_norm(x, lw.ln1_g, lw.ln1_b);
        Tensor q = num::add_bias(num::matmul(h, lw.wq), lw.bq);
        Tensor k = num::add_bias(num::matmul(h, lw.wk), lw.bk);
        Tensor vv = num::add_bias(num::matmul(h, lw.wv), lw.bv);
        std::vector<Tensor> ctx;
        ctx.reserve(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            const std::size_t c0 = static_cast<std::size_t>(hd) * dh;
            Tensor qh = num::slice_cols(q, c0, c0 + dh);
            Tensor kh = num::slice_cols(k, c0, c0 + dh);
            Tensor vh = num::slice_cols(vv, c0, c0 + dh);
            Tensor scores = num::add(num::scale(num::matmul(qh, num::transpose(kh)), inv_sqrt_dh), mask);
            Tensor attn = num::softmax(scores, -1);
            if (l == tapped) fr.attn.push_back(attn);
            ctx.push_back(num::matmul(attn, vh));
        }
        Tensor merged = num::concat_cols(ctx);
        x = num::add(x, num::add_bias(num::matmul(merged, lw.wo), lw.bo));
        Tensor h2 = num::layer_norm(x, lw.ln2_g, lw.ln2_b);
        Tensor m1 = num::relu(num::add_bias(num::matmul(h2, lw.mlp_w1), lw.mlp_b1));
        x = num::add(x, num::add_bias(num::matmul(m1, lw.mlp_w2), lw.mlp_b2));
    }

    Tensor xf = num::layer_norm(x, ln_f_g_, ln_f_b_);
    Tensor resp_rows = num::slice_rows(xf, layout.resp_start, S);
    fr.resp_logits = num::add_bias(num::matmul(resp_rows, head_w_), head_b_);
    return fr;
}

ForwardResult Model::forward(const std::string& system_prompt, const std::string& instruction,
                             std::span<const std::string> history, const Raster& screenshot,
                             std::span<const int> response_ids) const {
    if (screenshot.h != cfg_.image_h() || screenshot.w != cfg_.image_w() || screenshot.channels != 3)
        throw DimMismatch("screenshot raster does not match model config");
    Tensor shot = Tensor::from({static_cast<std::size_t>(screenshot.h), static_cast<std::size_t>(screenshot.w), 3},
                               screenshot.px);
    return forward(system_prompt, instruction, history, shot, response_ids);
}

AgentOutput Model::generate_greedy(const std::string& instruction, std::span<const std::string> history,
                                   const Raster& screenshot, const std::string& system_prompt) const {
    const Vocabulary& v = vocab();
    std::vector<int> generated;
    ForwardResult last;
    for (int step = 0; step < cfg_.gen_cap; ++step) {
        last = forward(system_prompt, instruction, history, screenshot, generated);
        const std::size_t rows = last.resp_logits.rows();
        const std::size_t V = last.resp_logits.cols();
        const double* row = last.resp_logits.value().data() + (rows - 1) * V;
        // argmax over the closed symbol set; ids past used_size have no string form
        const std::size_t decodable = std::min<std::size_t>(V, v.used_size());
        int best = 0;
        for (std::size_t j = 1; j < decodable; ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        generated.push_back(best);
        if (best == v.eos()) break;
    }

    AgentOutput out;
    out.layout = last.layout;
    out.action_tokens = generated;
    std::span<const int> text_ids(generated);
    if (!generated.empty() && generated.back() == v.eos()) text_ids = text_ids.subspan(0, text_ids.size() - 1);
    out.action_text = v.detokenize(text_ids);

    // the final forward holds the attention rows for every generated token:
    // token t was predicted at query position resp_start + t
    const std::size_t S = last.layout.total;
    out.attention_raw.resize(generated.size());
    for (std::size_t t = 0; t < generated.size(); ++t) {
        out.attention_raw[t].resize(last.attn.size());
        const std::size_t qpos = last.layout.resp_start + t;
        for (std::size_t h = 0; h < last.attn.size(); ++h) {
            const auto& av = last.attn[h].value();
            out.attention_raw[t][h].assign(av.begin() + static_cast<std::ptrdiff_t>(qpos * S),
                                           av.begin() + static_cast<std::ptrdiff_t>((qpos + 1) * S));
        }
    }
    return out;
}

AttentionMap extract_attention_map(const AgentOutput& out, const ModelConfig& cfg) {
    if (out.attention_raw.empty()) throw EmptyGeneration("no generated tokens to average over");
    AttentionMap map;
    map.rows = cfg.grid_rows;
    map.cols = cfg.grid_cols;
    map.a.assign(static_cast<std::size_t>(cfg.grid_rows) * cfg.grid_cols, 0.0);
    const std::size_t n = out.attention_raw.size();
    const std::size_t heads = out.attention_raw[0].size();
    for (const auto& per_head : out.attention_raw)
        for (const auto& row : per_head)
            for (std::size_t k = 0; k < map.a.size(); ++k) map.a[k] += row[out.layout.img_start + k];
    const double denom = static_cast<double>(n) * static_cast<double>(heads);
    for (auto& v : map.a) v /= denom;
    return map;
}

num::Tensor attention_map_tensor(const ForwardResult& fr, const ModelConfig& cfg) {
    const std::size_t NM = static_cast<std::size_t>(cfg.n_image_tokens());
    const std::size_t T = fr.layout.resp_rows();
    if (T == 0 || fr.attn.empty()) throw EmptyGeneration("forward result has no response rows");
    Tensor ones = Tensor::full({1, T}, 1.0);
    Tensor acc;
    for (const auto& attn : fr.attn) {
        Tensor rows = num::slice_rows(attn, fr.layout.resp_start, fr.layout.total);
        Tensor img = num::slice_cols(rows, fr.layout.img_start, fr.layout.img_start + NM);
        Tensor summed = num::matmul(ones, img); // {1, NM}
        acc = acc.defined() ? num::add(acc, summed) : summed;
    }
    return num::scale(acc, 1.0 / (static_cast<double>(T) * static_cast<double>(fr.attn.size())));
}

} // namespace eia::agent
