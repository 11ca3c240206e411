// Toy vision-language GUI agent: linear patch encoder feeding a causal
// decoder-only transformer as prefix keys, with extractable per-head
// attention from a configurable layer (default: last).
//
// Sequence layout: [BOS] system <sep> instruction <sep> (history action
// <sep>)* | image tokens | <resp> response...  Text positions use one learned
// absolute table, image tokens a separate per-patch table. Weights are
// immutable during inference; concurrent read-only forwards are safe.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eia/io.hpp"
#include "eia/tensor.hpp"
#include "eia/vocab.hpp"

namespace eia::agent {

struct DimMismatch : std::runtime_error {
    explicit DimMismatch(const std::string& what) : std::runtime_error("dim mismatch: " + what) {}
};
struct SequenceTooLong : std::runtime_error {
    explicit SequenceTooLong(const std::string& what) : std::runtime_error("sequence too long: " + what) {}
};
struct EmptyGeneration : std::runtime_error {
    explicit EmptyGeneration(const std::string& what) : std::runtime_error("empty generation: " + what) {}
};

struct ModelConfig {
    int grid_rows = 12;
    int grid_cols = 12;
    int patch_px = 8;
    int d_model = 64;
    int layers = 2;
    int heads = 4;
    int vocab_size = 256;
    int max_seq_len = 288;
    int attn_layer = -1; // layer whose attention feeds the maps; -1 = last
    int gen_cap = 24;

    int image_h() const { return grid_rows * patch_px; }
    int image_w() const { return grid_cols * patch_px; }
    int n_image_tokens() const { return grid_rows * grid_cols; }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct SeqLayout {
    std::size_t prefix_len = 0; // text tokens before the image block
    std::size_t img_start = 0;
    std::size_t resp_start = 0; // position of the <resp> token
    std::size_t total = 0;
    std::size_t resp_rows() const { return total - resp_start; }
};

struct ForwardResult {
    num::Tensor resp_logits;        // {resp_rows, vocab}
    std::vector<num::Tensor> attn;  // per head, {S,S} softmax rows of the tapped layer
    SeqLayout layout;
};

struct AgentOutput {
    std::string action_text;
    std::vector<int> action_tokens; // generated ids, including <eos> when emitted
    // attention_raw[t][h] = attention row of generated token t, head h, over
    // all key positions of the final decode sequence
    std::vector<std::vector<std::vector<double>>> attention_raw;
    SeqLayout layout;
};

struct AttentionMap {
    int rows = 0, cols = 0;
    std::vector<double> a; // row-major, rows*cols
};

// row-major patch order; index map is a bijection on pixel coordinates
std::vector<std::size_t> patch_index_map(const ModelConfig& cfg);
num::Tensor patchify(const num::Tensor& screenshot, const ModelConfig& cfg);

struct LayerWeights {
    num::Tensor ln1_g, ln1_b;
    num::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    num::Tensor ln2_g, ln2_b;
    num::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

class Model {
public:
    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    ForwardResult forward(const std::string& system_prompt, const std::string& instruction,
                          std::span<const std::string> history, const num::Tensor& screenshot,
                          std::span<const int> response_ids) const;
    ForwardResult forward(const std::string& system_prompt, const std::string& instruction,
                          std::span<const std::string> history, const Raster& screenshot,
                          std::span<const int> response_ids) const;

    AgentOutput generate_greedy(const std::string& instruction, std::span<const std::string> history,
                                const Raster& screenshot,
                                const std::string& system_prompt = Vocabulary::system_prompt()) const;

    std::vector<std::pair<std::string, num::Tensor>> named_params();
    std::vector<std::pair<std::string, num::Tensor>> named_params() const;
    void set_trainable(bool trainable);

    void save(const std::string& ckpt_path) const;
    static Model load(const std::string& ckpt_path, const ModelConfig& cfg);
    std::uint64_t weights_hash() const;

private:
    Model() = default;

    ModelConfig cfg_;
    num::Tensor tok_emb_, pos_text_, pos_img_;
    num::Tensor patch_w_, patch_b_;
    std::vector<LayerWeights> layers_;
    num::Tensor ln_f_g_, ln_f_b_;
    num::Tensor head_w_, head_b_;
};

std::vector<int> build_prefix_ids(const std::string& system_prompt, const std::string& instruction,
                                  std::span<const std::string> history);

AttentionMap extract_attention_map(const AgentOutput& out, const ModelConfig& cfg);
// differentiable counterpart used during trigger optimization: mean over
// heads and response rows of the image-key attention columns, shape {1, n*m}
num::Tensor attention_map_tensor(const ForwardResult& fr, const ModelConfig& cfg);

} // namespace eia::agent
