#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "dldl/image.hpp"
#include "dldl/labelspace.hpp"

namespace dldl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ViTConfig {
    int input_channels = 5;
    int image_size = 144;
    int patch_size = 12;
    int hidden_size = 1024;
    int num_layers = 8;
    int num_heads = 4;
    int intermediate_size = 1024;
    double hidden_dropout = 0.02;
    double attention_dropout = 0.02;

    void validate() const;
    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int num_tokens() const { return num_patches() + 1; }  // + class token
    int patch_dim() const { return input_channels * patch_size * patch_size; }
};

struct NeckConfig {
    int layer_size = 512;
    int num_layers = 3;
    double dropout = 0.2;

    void validate() const;
};

struct HeadConfig {
    std::string label_name;
    LabelSpace label_space;
    double label_sigma = 0.6;  // std of the training label distributions
    int mlp_layers = 2;
    int mlp_layer_size = 256;
    double dropout = 0.8;

    void validate() const;
};

struct Linear {
    Matrix w;  // in x out
    Vector b;  // out
    Matrix gw;
    Vector gb;
};

struct LayerNormParams {
    Vector gamma, beta;
    Vector ggamma, gbeta;
};

struct Block {
    LayerNormParams ln1;
    Linear q, k, v, o;
    LayerNormParams ln2;
    Linear fc1, fc2;
};

struct HeadNet {
    std::vector<Linear> mlp;
    Matrix mix;  // own-slice rows of the global feature-mixing matrix: m x D
    Matrix gmix;
    Linear out;
};

enum class ParamOwner { kBackbone, kNeck, kHead };

struct ParamRef {
    std::string name;
    ParamOwner owner;
    int head_index;  // -1 unless owner == kHead
    double* value;
    double* grad;
    std::size_t size;
    int rows, cols;
};

// Per-sample attention probabilities of one forward pass: [layer][head] T x T.
using AttentionMaps = std::vector<std::vector<Matrix>>;

struct ModelOutput {
    std::vector<LabelDistribution> head_pmfs;  // model head order
    AttentionMaps attentions;                  // filled when requested
};

// Cached activations of one forward pass, consumed by backward_head.
class Workspace {
public:
    int batch = 0;
    bool train = false;

    Matrix patch_rows;  // B*P x patch_dim
    Matrix emb;         // B*T x d, after dropout
    Matrix emb_mask;

    struct LayerCache {
        Matrix in;
        Matrix ln1_xhat;
        Vector ln1_inv;
        Matrix ln1_out;
        Matrix q, k, v;
        std::vector<Matrix> probs;       // per (sample, head): T x T
        std::vector<Matrix> probs_drop;  // after attention dropout
        std::vector<Matrix> attn_masks;  // train only
        Matrix ctx;
        Matrix proj_mask;
        Matrix res1;
        Matrix ln2_xhat;
        Vector ln2_inv;
        Matrix ln2_out;
        Matrix h_pre, h_act;
        Matrix mlp_mask;
        Matrix out;
    };
    std::vector<LayerCache> layers;

    Matrix final_xhat;
    Vector final_inv;
    Matrix final_out;
    Matrix cls_rows;  // B x d

    std::vector<Matrix> neck_pre, neck_act, neck_mask;
    Matrix neck_out;

    struct HeadCache {
        std::vector<Matrix> pre, act, mask;
        Matrix mixed;
        Matrix logits;
    };
    std::vector<HeadCache> heads;
    Matrix z;  // B x D
};

class Model {
public:
    Model(ViTConfig vit, NeckConfig neck, std::vector<HeadConfig> heads, std::uint64_t seed);

    const ViTConfig& vit_config() const { return vit_; }
    const NeckConfig& neck_config() const { return neck_; }
    const std::vector<HeadConfig>& head_configs() const { return head_cfgs_; }
    int head_index(const std::string& label_name) const;  // -1 when absent
    int mix_dim() const { return mix_dim_; }

    // Inference path, dropout disabled.
    std::vector<ModelOutput> forward(const std::vector<const MultispectralImage*>& batch,
                                     bool collect_attention = false) const;
    ModelOutput forward_one(const MultispectralImage& img, bool collect_attention = false) const;

    // Training path with cached activations; rng drives the dropout masks.
    std::unique_ptr<Workspace> forward_train(const std::vector<const MultispectralImage*>& batch, Rng& rng);

    // Per-head logits of a completed forward (rows = batch).
    const Matrix& logits(const Workspace& ws, int head) const;

    // Accumulates gradients of one head's loss; d_logits rows = batch.
    void backward_head(const Workspace& ws, int head, const Matrix& d_logits);

    void zero_grads();
    std::vector<ParamRef>& params() { return params_; }
    const std::vector<ParamRef>& params() const { return params_; }
    std::size_t parameter_count() const;

private:
    friend Model transfer_backbone(const Model&, std::vector<HeadConfig>, std::uint64_t);
    friend void save_checkpoint(const Model&, const std::string&);
    friend Model load_checkpoint(const std::string&);

    void build_params(std::uint64_t seed);
    void register_params();
    Matrix images_to_patch_rows(const std::vector<const MultispectralImage*>& batch) const;
    void forward_impl(Workspace& ws, bool train, Rng* rng) const;

    ViTConfig vit_;
    NeckConfig neck_;
    std::vector<HeadConfig> head_cfgs_;
    int mix_dim_ = 0;

    Linear patch_embed_;
    Vector cls_, gcls_;
    Matrix pos_, gpos_;  // tokens x hidden
    std::vector<Block> blocks_;
    LayerNormParams ln_final_;
    std::vector<Linear> neck_layers_;
    std::vector<HeadNet> heads_;

    std::vector<ParamRef> params_;
};

// Analytic parameter count; must equal Model::parameter_count().
std::size_t expected_parameter_count(const ViTConfig& vit, const NeckConfig& neck,
                                     const std::vector<HeadConfig>& heads);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Copies backbone and neck weights, re-initializes heads (mixing = identity).
Model transfer_backbone(const Model& pretrained, std::vector<HeadConfig> new_heads, std::uint64_t seed);

struct RolloutMap {
    Matrix grid;          // patches_per_side x patches_per_side saliency
    double class_weight;  // class-token self weight
};

// Head-averaged, identity-augmented, row-renormalized attention matrices
// multiplied across layers; class-token row over the patch grid.
RolloutMap attention_rollout(const AttentionMaps& attentions);

}  // namespace dldl
