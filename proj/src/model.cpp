#include "dldl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace dldl {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

double dgelu(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

void fill_normal(Matrix& m, Rng& rng, double std_dev) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal() * std_dev;
}

void init_linear(Linear& lin, int in, int out, Rng& rng, double std_dev) {
    lin.w = Matrix(in, out);
    fill_normal(lin.w, rng, std_dev);
    lin.b = Vector::Zero(out);
    lin.gw = Matrix::Zero(in, out);
    lin.gb = Vector::Zero(out);
}

void init_layer_norm(LayerNormParams& p, int dim) {
    p.gamma = Vector::Ones(dim);
    p.beta = Vector::Zero(dim);
    p.ggamma = Vector::Zero(dim);
    p.gbeta = Vector::Zero(dim);
}

Matrix linear_forward(const Matrix& x, const Linear& lin) {
    return (x * lin.w).rowwise() + lin.b.transpose();
}

// Accumulates parameter grads, returns input grad.
Matrix linear_backward(const Matrix& x, const Matrix& gy, Linear& lin) {
    lin.gw.noalias() += x.transpose() * gy;
    lin.gb.noalias() += gy.colwise().sum().transpose();
    return gy * lin.w.transpose();
}

void layer_norm_forward(const Matrix& x, const LayerNormParams& p, Matrix& y, Matrix& xhat, Vector& inv_std) {
    const Eigen::Index n = x.rows(), d = x.cols();
    y.resize(n, d);
    xhat.resize(n, d);
    inv_std.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        double mean = x.row(r).mean();
        double var = (x.row(r).array() - mean).square().mean();
        double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_std(r) = inv;
        xhat.row(r) = (x.row(r).array() - mean) * inv;
        y.row(r) = xhat.row(r).cwiseProduct(p.gamma.transpose()) + p.beta.transpose();
    }
}

Matrix layer_norm_backward(const Matrix& gy, const Matrix& xhat, const Vector& inv_std, LayerNormParams& p) {
    const Eigen::Index n = gy.rows(), d = gy.cols();
    Matrix gx(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        Eigen::RowVectorXd gxhat = gy.row(r).cwiseProduct(p.gamma.transpose());
        double m1 = gxhat.mean();
        double m2 = gxhat.cwiseProduct(xhat.row(r)).mean();
        gx.row(r) = (gxhat.array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
    }
    p.ggamma.noalias() += gy.cwiseProduct(xhat).colwise().sum().transpose();
    p.gbeta.noalias() += gy.colwise().sum().transpose();
    return gx;
}

Matrix make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Matrix m(rows, cols);
    const double keep = 1.0 - p;
    const double scale = 1.0 / keep;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform01() < keep ? scale : 0.0;
    return m;
}

void softmax_rows(Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

}  // namespace

void ViTConfig::validate() const {
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
    if (image_size < 1 || patch_size < 1) throw ConfigError("image/patch size must be positive");
    if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
    if (hidden_size < 1 || num_layers < 1 || intermediate_size < 1)
        throw ConfigError("hidden/intermediate sizes and layer count must be positive");
    if (num_heads < 1 || hidden_size % num_heads != 0)
        throw ConfigError("hidden_size must be divisible by num_heads");
    if (!(hidden_dropout >= 0.0 && hidden_dropout < 1.0) || !(attention_dropout >= 0.0 && attention_dropout < 1.0))
        throw ConfigError("dropout probabilities must lie in [0,1)");
}

void NeckConfig::validate() const {
    if (num_layers < 1 || layer_size < 1) throw ConfigError("neck requires at least one layer");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("neck dropout must lie in [0,1)");
}

void HeadConfig::validate() const {
    if (label_name.empty()) throw ConfigError("head label_name must be set");
    label_space.validate();
    if (!(label_sigma > 0.0)) throw ConfigError("head label_sigma must be positive");
    if (mlp_layers < 1 || mlp_layer_size < 1) throw ConfigError("head requires at least one MLP layer");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("head dropout must lie in [0,1)");
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(ViTConfig vit, NeckConfig neck, std::vector<HeadConfig> heads, std::uint64_t seed)
    : vit_(vit), neck_(neck), head_cfgs_(std::move(heads)) {
    vit_.validate();
    neck_.validate();
    if (head_cfgs_.empty()) throw ConfigError("model requires at least one head");
    mix_dim_ = 0;
    for (const auto& h : head_cfgs_) {
        h.validate();
        mix_dim_ += h.mlp_layer_size;
    }
    build_params(seed);
    register_params();
}

void Model::build_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xA11CE));
    const int d = vit_.hidden_size;

    auto xavier = [](int in, int out) { return std::sqrt(2.0 / double(in + out)); };
    auto kaiming = [](int in) { return std::sqrt(2.0 / double(in)); };

    init_linear(patch_embed_, vit_.patch_dim(), d, rng, xavier(vit_.patch_dim(), d));
    cls_ = Vector(d);
    for (int i = 0; i < d; ++i) cls_(i) = rng.normal() * 0.02;
    gcls_ = Vector::Zero(d);
    pos_ = Matrix(vit_.num_tokens(), d);
    fill_normal(pos_, rng, 0.02);
    gpos_ = Matrix::Zero(vit_.num_tokens(), d);

    blocks_.resize(std::size_t(vit_.num_layers));
    for (auto& blk : blocks_) {
        init_layer_norm(blk.ln1, d);
        init_linear(blk.q, d, d, rng, xavier(d, d));
        init_linear(blk.k, d, d, rng, xavier(d, d));
        init_linear(blk.v, d, d, rng, xavier(d, d));
        init_linear(blk.o, d, d, rng, xavier(d, d));
        init_layer_norm(blk.ln2, d);
        init_linear(blk.fc1, d, vit_.intermediate_size, rng, xavier(d, vit_.intermediate_size));
        init_linear(blk.fc2, vit_.intermediate_size, d, rng, xavier(vit_.intermediate_size, d));
    }
    init_layer_norm(ln_final_, d);

    neck_layers_.resize(std::size_t(neck_.num_layers));
    int in_dim = d;
    for (auto& lin : neck_layers_) {
        init_linear(lin, in_dim, neck_.layer_size, rng, kaiming(in_dim));
        in_dim = neck_.layer_size;
    }

    heads_.resize(head_cfgs_.size());
    int offset = 0;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        const auto& cfg = head_cfgs_[h];
        auto& net = heads_[h];
        net.mlp.resize(std::size_t(cfg.mlp_layers));
        int hin = neck_.layer_size;
        for (auto& lin : net.mlp) {
            init_linear(lin, hin, cfg.mlp_layer_size, rng, kaiming(hin));
            hin = cfg.mlp_layer_size;
        }
        // own-slice rows of the global mixing matrix; starts as the unit matrix
        net.mix = Matrix::Zero(cfg.mlp_layer_size, mix_dim_);
        net.mix.block(0, offset, cfg.mlp_layer_size, cfg.mlp_layer_size) =
            Matrix::Identity(cfg.mlp_layer_size, cfg.mlp_layer_size);
        net.gmix = Matrix::Zero(cfg.mlp_layer_size, mix_dim_);
        init_linear(net.out, cfg.mlp_layer_size, cfg.label_space.num_bins, rng, 0.02);
        offset += cfg.mlp_layer_size;
    }
}

void Model::register_params() {
    params_.clear();
    auto add = [&](const std::string& name, ParamOwner owner, int head, Matrix& w, Matrix& g) {
        params_.push_back({name, owner, head, w.data(), g.data(), std::size_t(w.size()), int(w.rows()), int(w.cols())});
    };
    auto addv = [&](const std::string& name, ParamOwner owner, int head, Vector& w, Vector& g) {
        params_.push_back({name, owner, head, w.data(), g.data(), std::size_t(w.size()), int(w.size()), 1});
    };
    auto add_linear = [&](const std::string& base, ParamOwner owner, int head, Linear& lin) {
        add(base + ".w", owner, head, lin.w, lin.gw);
        addv(base + ".b", owner, head, lin.b, lin.gb);
    };
    auto add_ln = [&](const std::string& base, ParamOwner owner, int head, LayerNormParams& p) {
        addv(base + ".gamma", owner, head, p.gamma, p.ggamma);
        addv(base + ".beta", owner, head, p.beta, p.gbeta);
    };

    add_linear("backbone.patch_embed", ParamOwner::kBackbone, -1, patch_embed_);
    addv("backbone.cls", ParamOwner::kBackbone, -1, cls_, gcls_);
    add("backbone.pos", ParamOwner::kBackbone, -1, pos_, gpos_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        std::string base = "backbone.block" + std::to_string(l);
        add_ln(base + ".ln1", ParamOwner::kBackbone, -1, blocks_[l].ln1);
        add_linear(base + ".q", ParamOwner::kBackbone, -1, blocks_[l].q);
        add_linear(base + ".k", ParamOwner::kBackbone, -1, blocks_[l].k);
        add_linear(base + ".v", ParamOwner::kBackbone, -1, blocks_[l].v);
        add_linear(base + ".o", ParamOwner::kBackbone, -1, blocks_[l].o);
        add_ln(base + ".ln2", ParamOwner::kBackbone, -1, blocks_[l].ln2);
        add_linear(base + ".fc1", ParamOwner::kBackbone, -1, blocks_[l].fc1);
        add_linear(base + ".fc2", ParamOwner::kBackbone, -1, blocks_[l].fc2);
    }
    add_ln("backbone.ln_final", ParamOwner::kBackbone, -1, ln_final_);
    for (std::size_t l = 0; l < neck_layers_.size(); ++l)
        add_linear("neck.layer" + std::to_string(l), ParamOwner::kNeck, -1, neck_layers_[l]);
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        std::string base = "head." + head_cfgs_[h].label_name;
        for (std::size_t l = 0; l < heads_[h].mlp.size(); ++l)
            add_linear(base + ".mlp" + std::to_string(l), ParamOwner::kHead, int(h), heads_[h].mlp[l]);
        add(base + ".mix", ParamOwner::kHead, int(h), heads_[h].mix, heads_[h].gmix);
        add_linear(base + ".out", ParamOwner::kHead, int(h), heads_[h].out);
    }
}

int Model::head_index(const std::string& label_name) const {
    for (std::size_t h = 0; h < head_cfgs_.size(); ++h)
        if (head_cfgs_[h].label_name == label_name) return int(h);
    return -1;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size;
    return n;
}

std::size_t expected_parameter_count(const ViTConfig& vit, const NeckConfig& neck,
                                     const std::vector<HeadConfig>& heads) {
    const std::size_t d = std::size_t(vit.hidden_size);
    const std::size_t inter = std::size_t(vit.intermediate_size);
    std::size_t n = 0;
    n += std::size_t(vit.patch_dim()) * d + d;          // patch embedding
    n += d;                                             // class token
    n += std::size_t(vit.num_tokens()) * d;             // positional embeddings
    n += std::size_t(vit.num_layers) * (2 * d          // ln1
                                        + 4 * (d * d + d)  // q,k,v,o
                                        + 2 * d             // ln2
                                        + d * inter + inter  // fc1
                                        + inter * d + d);    // fc2
    n += 2 * d;  // final layer norm
    std::size_t ls = std::size_t(neck.layer_size);
    n += d * ls + ls + std::size_t(neck.num_layers - 1) * (ls * ls + ls);
    std::size_t mix_dim = 0;
    for (const auto& h : heads) mix_dim += std::size_t(h.mlp_layer_size);
    for (const auto& h : heads) {
        std::size_t m = std::size_t(h.mlp_layer_size);
        std::size_t k = std::size_t(h.label_space.num_bins);
        n += ls * m + m + std::size_t(h.mlp_layers - 1) * (m * m + m);
        n += m * mix_dim;
        n += m * k + k;
    }
    return n;
}

void Model::zero_grads() {
    for (auto& p : params_) std::fill(p.grad, p.grad + p.size, 0.0);
}

Matrix Model::images_to_patch_rows(const std::vector<const MultispectralImage*>& batch) const {
    const int p = vit_.patch_size;
    const int per_side = vit_.patches_per_side();
    const int n_patches = vit_.num_patches();
    Matrix rows(Eigen::Index(batch.size()) * n_patches, vit_.patch_dim());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& img = *batch[b];
        img.validate();
        if (img.channels != vit_.input_channels || img.height != vit_.image_size || img.width != vit_.image_size)
            throw ShapeError("image shape does not match model configuration");
        for (int pi = 0; pi < per_side; ++pi)
            for (int pj = 0; pj < per_side; ++pj) {
                Eigen::Index row = Eigen::Index(b) * n_patches + Eigen::Index(pi) * per_side + pj;
                int col = 0;
                for (int c = 0; c < img.channels; ++c)
                    for (int y = 0; y < vit_.patch_size; ++y)
                        for (int x = 0; x < vit_.patch_size; ++x)
                            rows(row, col++) = img.at(c, pi * p + y, pj * p + x);
            }
    }
    return rows;
}

void Model::forward_impl(Workspace& ws, bool train, Rng* rng) const {
    const int B = ws.batch;
    const int T = vit_.num_tokens();
    const int P = vit_.num_patches();
    const int d = vit_.hidden_size;
    const int nh = vit_.num_heads;
    const int dh = d / nh;
    const double scale = 1.0 / std::sqrt(double(dh));

    ws.train = train;

    Matrix emb_p = linear_forward(ws.patch_rows, patch_embed_);
    ws.emb.resize(Eigen::Index(B) * T, d);
    for (int b = 0; b < B; ++b) {
        ws.emb.row(Eigen::Index(b) * T) = cls_.transpose() + pos_.row(0);
        for (int i = 0; i < P; ++i)
            ws.emb.row(Eigen::Index(b) * T + 1 + i) = emb_p.row(Eigen::Index(b) * P + i) + pos_.row(1 + i);
    }
    if (train && vit_.hidden_dropout > 0.0) {
        ws.emb_mask = make_dropout_mask(ws.emb.rows(), ws.emb.cols(), vit_.hidden_dropout, *rng);
        ws.emb = ws.emb.cwiseProduct(ws.emb_mask);
    }

    ws.layers.assign(std::size_t(vit_.num_layers), {});
    Matrix x = ws.emb;
    for (int l = 0; l < vit_.num_layers; ++l) {
        auto& lc = ws.layers[std::size_t(l)];
        const auto& blk = blocks_[std::size_t(l)];
        lc.in = x;
        layer_norm_forward(lc.in, blk.ln1, lc.ln1_out, lc.ln1_xhat, lc.ln1_inv);
        lc.q = linear_forward(lc.ln1_out, blk.q);
        lc.k = linear_forward(lc.ln1_out, blk.k);
        lc.v = linear_forward(lc.ln1_out, blk.v);

        lc.probs.resize(std::size_t(B) * std::size_t(nh));
        lc.probs_drop.resize(std::size_t(B) * std::size_t(nh));
        if (train && vit_.attention_dropout > 0.0) lc.attn_masks.resize(std::size_t(B) * std::size_t(nh));
        lc.ctx.resize(Eigen::Index(B) * T, d);
        for (int b = 0; b < B; ++b)
            for (int h = 0; h < nh; ++h) {
                auto qh = lc.q.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);
                auto kh = lc.k.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);
                auto vh = lc.v.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);
                Matrix s = qh * kh.transpose() * scale;
                softmax_rows(s);
                std::size_t idx = std::size_t(b) * std::size_t(nh) + std::size_t(h);
                lc.probs[idx] = s;
                if (train && vit_.attention_dropout > 0.0) {
                    lc.attn_masks[idx] = make_dropout_mask(T, T, vit_.attention_dropout, *rng);
                    lc.probs_drop[idx] = s.cwiseProduct(lc.attn_masks[idx]);
                } else {
                    lc.probs_drop[idx] = s;
                }
                lc.ctx.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh) = lc.probs_drop[idx] * vh;
            }

        Matrix attn_y = linear_forward(lc.ctx, blk.o);
        if (train && vit_.hidden_dropout > 0.0) {
            lc.proj_mask = make_dropout_mask(attn_y.rows(), attn_y.cols(), vit_.hidden_dropout, *rng);
            attn_y = attn_y.cwiseProduct(lc.proj_mask);
        }
        lc.res1 = lc.in + attn_y;

        layer_norm_forward(lc.res1, blk.ln2, lc.ln2_out, lc.ln2_xhat, lc.ln2_inv);
        lc.h_pre = linear_forward(lc.ln2_out, blk.fc1);
        lc.h_act = lc.h_pre.unaryExpr([](double v) { return gelu(v); });
        Matrix mlp_y = linear_forward(lc.h_act, blk.fc2);
        if (train && vit_.hidden_dropout > 0.0) {
            lc.mlp_mask = make_dropout_mask(mlp_y.rows(), mlp_y.cols(), vit_.hidden_dropout, *rng);
            mlp_y = mlp_y.cwiseProduct(lc.mlp_mask);
        }
        lc.out = lc.res1 + mlp_y;
        x = lc.out;
    }

    layer_norm_forward(x, ln_final_, ws.final_out, ws.final_xhat, ws.final_inv);
    ws.cls_rows.resize(B, d);
    for (int b = 0; b < B; ++b) ws.cls_rows.row(b) = ws.final_out.row(Eigen::Index(b) * T);

    ws.neck_pre.assign(std::size_t(neck_.num_layers), {});
    ws.neck_act.assign(std::size_t(neck_.num_layers), {});
    ws.neck_mask.assign(std::size_t(neck_.num_layers), {});
    Matrix a = ws.cls_rows;
    for (int l = 0; l < neck_.num_layers; ++l) {
        ws.neck_pre[std::size_t(l)] = linear_forward(a, neck_layers_[std::size_t(l)]);
        ws.neck_act[std::size_t(l)] = ws.neck_pre[std::size_t(l)].cwiseMax(0.0);
        a = ws.neck_act[std::size_t(l)];
        if (train && neck_.dropout > 0.0) {
            ws.neck_mask[std::size_t(l)] = make_dropout_mask(a.rows(), a.cols(), neck_.dropout, *rng);
            a = a.cwiseProduct(ws.neck_mask[std::size_t(l)]);
        }
        ws.neck_act[std::size_t(l)] = a;  // post-dropout activation feeding the next layer
    }
    ws.neck_out = a;

    ws.heads.assign(heads_.size(), {});
    ws.z.resize(B, mix_dim_);
    int offset = 0;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        const auto& cfg = head_cfgs_[h];
        auto& hc = ws.heads[h];
        hc.pre.assign(std::size_t(cfg.mlp_layers), {});
        hc.act.assign(std::size_t(cfg.mlp_layers), {});
        hc.mask.assign(std::size_t(cfg.mlp_layers), {});
        Matrix ah = ws.neck_out;
        for (int l = 0; l < cfg.mlp_layers; ++l) {
            hc.pre[std::size_t(l)] = linear_forward(ah, heads_[h].mlp[std::size_t(l)]);
            ah = hc.pre[std::size_t(l)].cwiseMax(0.0);
            if (train && cfg.dropout > 0.0) {
                hc.mask[std::size_t(l)] = make_dropout_mask(ah.rows(), ah.cols(), cfg.dropout, *rng);
                ah = ah.cwiseProduct(hc.mask[std::size_t(l)]);
            }
            hc.act[std::size_t(l)] = ah;
        }
        ws.z.block(0, offset, B, cfg.mlp_layer_size) = ah;
        offset += cfg.mlp_layer_size;
    }
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        auto& hc = ws.heads[h];
        hc.mixed = ws.z * heads_[h].mix.transpose();
        hc.logits = linear_forward(hc.mixed, heads_[h].out);
    }
}

std::unique_ptr<Workspace> Model::forward_train(const std::vector<const MultispectralImage*>& batch, Rng& rng) {
    if (batch.empty()) throw ShapeError("empty batch");
    auto ws = std::make_unique<Workspace>();
    ws->batch = int(batch.size());
    ws->patch_rows = images_to_patch_rows(batch);
    forward_impl(*ws, true, &rng);
    return ws;
}

const Matrix& Model::logits(const Workspace& ws, int head) const {
    return ws.heads.at(std::size_t(head)).logits;
}

std::vector<ModelOutput> Model::forward(const std::vector<const MultispectralImage*>& batch,
                                        bool collect_attention) const {
    if (batch.empty()) throw ShapeError("empty batch");
    Workspace ws;
    ws.batch = int(batch.size());
    ws.patch_rows = images_to_patch_rows(batch);
    forward_impl(ws, false, nullptr);

    const int B = ws.batch;
    const int nh = vit_.num_heads;
    std::vector<ModelOutput> outputs;
    outputs.resize(std::size_t(B));
    for (int b = 0; b < B; ++b) {
        auto& out = outputs[std::size_t(b)];
        out.head_pmfs.reserve(heads_.size());
        for (std::size_t h = 0; h < heads_.size(); ++h) {
            Matrix row = ws.heads[h].logits.row(b);
            softmax_rows(row);
            LabelDistribution dist;
            dist.space = head_cfgs_[h].label_space;
            dist.pmf.assign(row.data(), row.data() + row.size());
            out.head_pmfs.push_back(std::move(dist));
        }
        if (collect_attention) {
            out.attentions.resize(std::size_t(vit_.num_layers));
            for (int l = 0; l < vit_.num_layers; ++l) {
                auto& layer = out.attentions[std::size_t(l)];
                layer.reserve(std::size_t(nh));
                for (int h = 0; h < nh; ++h)
                    layer.push_back(ws.layers[std::size_t(l)].probs[std::size_t(b) * std::size_t(nh) + std::size_t(h)]);
            }
        }
    }
    return outputs;
}

ModelOutput Model::forward_one(const MultispectralImage& img, bool collect_attention) const {
    return forward({&img}, collect_attention)[0];
}

void Model::backward_head(const Workspace& ws, int head, const Matrix& d_logits) {
    const int B = ws.batch;
    const int T = vit_.num_tokens();
    const int P = vit_.num_patches();
    const int d = vit_.hidden_size;
    const int nh = vit_.num_heads;
    const int dh = d / nh;
    const double scale = 1.0 / std::sqrt(double(dh));
    auto& hn = heads_[std::size_t(head)];
    const auto& hc = ws.heads[std::size_t(head)];

    // output layer and mixing
    hn.out.gw.noalias() += hc.mixed.transpose() * d_logits;
    hn.out.gb.noalias() += d_logits.colwise().sum().transpose();
    Matrix g_mixed = d_logits * hn.out.w.transpose();
    hn.gmix.noalias() += g_mixed.transpose() * ws.z;
    Matrix g_z = g_mixed * hn.mix;  // B x D

    // through every head's MLP slice (mixing couples them), into the neck
    Matrix g_neck_out = Matrix::Zero(B, neck_.layer_size);
    int offset = 0;
    for (std::size_t j = 0; j < heads_.size(); ++j) {
        const auto& cfg = head_cfgs_[j];
        const auto& cache = ws.heads[j];
        Matrix g = g_z.block(0, offset, B, cfg.mlp_layer_size);
        for (int l = cfg.mlp_layers - 1; l >= 0; --l) {
            if (ws.train && cfg.dropout > 0.0) g = g.cwiseProduct(cache.mask[std::size_t(l)]);
            g = g.cwiseProduct(
                cache.pre[std::size_t(l)].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
            const Matrix& input = l == 0 ? ws.neck_out : cache.act[std::size_t(l - 1)];
            g = linear_backward(input, g, heads_[j].mlp[std::size_t(l)]);
        }
        g_neck_out += g;
        offset += cfg.mlp_layer_size;
    }

    // neck backward
    Matrix g = g_neck_out;
    for (int l = neck_.num_layers - 1; l >= 0; --l) {
        if (ws.train && neck_.dropout > 0.0) g = g.cwiseProduct(ws.neck_mask[std::size_t(l)]);
        g = g.cwiseProduct(ws.neck_pre[std::size_t(l)].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
        const Matrix& input = l == 0 ? ws.cls_rows : ws.neck_act[std::size_t(l - 1)];
        g = linear_backward(input, g, neck_layers_[std::size_t(l)]);
    }

    // scatter class-token gradients, final layer norm backward
    Matrix g_final = Matrix::Zero(Eigen::Index(B) * T, d);
    for (int b = 0; b < B; ++b) g_final.row(Eigen::Index(b) * T) = g.row(b);
    Matrix g_x = layer_norm_backward(g_final, ws.final_xhat, ws.final_inv, ln_final_);

    for (int l = vit_.num_layers - 1; l >= 0; --l) {
        const auto& lc = ws.layers[std::size_t(l)];
        auto& blk = blocks_[std::size_t(l)];

        // out = res1 + dropout(mlp)
        Matrix g_mlp_y = ws.train && vit_.hidden_dropout > 0.0 ? g_x.cwiseProduct(lc.mlp_mask).eval() : g_x;
        Matrix g_res1 = g_x;
        Matrix g_h_act = linear_backward(lc.h_act, g_mlp_y, blk.fc2);
        Matrix g_h_pre = g_h_act.cwiseProduct(lc.h_pre.unaryExpr([](double v) { return dgelu(v); }));
        Matrix g_ln2 = linear_backward(lc.ln2_out, g_h_pre, blk.fc1);
        g_res1 += layer_norm_backward(g_ln2, lc.ln2_xhat, lc.ln2_inv, blk.ln2);

        // res1 = in + dropout(attn)
        Matrix g_attn_y = ws.train && vit_.hidden_dropout > 0.0 ? g_res1.cwiseProduct(lc.proj_mask).eval() : g_res1;
        Matrix g_in = g_res1;
        Matrix g_ctx = linear_backward(lc.ctx, g_attn_y, blk.o);

        Matrix g_q = Matrix::Zero(Eigen::Index(B) * T, d);
        Matrix g_k = Matrix::Zero(Eigen::Index(B) * T, d);
        Matrix g_v = Matrix::Zero(Eigen::Index(B) * T, d);
        for (int b = 0; b < B; ++b)
            for (int h = 0; h < nh; ++h) {
                std::size_t idx = std::size_t(b) * std::size_t(nh) + std::size_t(h);
                auto qh = lc.q.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);
                auto kh = lc.k.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);
                auto vh = lc.v.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);
                auto g_ctx_h = g_ctx.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh);

                Matrix g_probs_drop = g_ctx_h * vh.transpose();
                g_v.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh).noalias() +=
                    lc.probs_drop[idx].transpose() * g_ctx_h;
                Matrix g_probs = ws.train && vit_.attention_dropout > 0.0
                                     ? g_probs_drop.cwiseProduct(lc.attn_masks[idx]).eval()
                                     : g_probs_drop;
                // softmax backward per row
                Matrix g_s(T, T);
                for (int r = 0; r < T; ++r) {
                    double dot = g_probs.row(r).cwiseProduct(lc.probs[idx].row(r)).sum();
                    g_s.row(r) = lc.probs[idx].row(r).cwiseProduct((g_probs.row(r).array() - dot).matrix());
                }
                g_q.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh).noalias() += g_s * kh * scale;
                g_k.block(Eigen::Index(b) * T, Eigen::Index(h) * dh, T, dh).noalias() +=
                    g_s.transpose() * qh * scale;
            }

        Matrix g_ln1 = linear_backward(lc.ln1_out, g_q, blk.q);
        g_ln1 += linear_backward(lc.ln1_out, g_k, blk.k);
        g_ln1 += linear_backward(lc.ln1_out, g_v, blk.v);
        g_in += layer_norm_backward(g_ln1, lc.ln1_xhat, lc.ln1_inv, blk.ln1);
        g_x = g_in;
    }

    if (ws.train && vit_.hidden_dropout > 0.0) g_x = g_x.cwiseProduct(ws.emb_mask);
    Matrix g_patch_rows(Eigen::Index(B) * P, d);
    for (int b = 0; b < B; ++b) {
        gcls_.noalias() += g_x.row(Eigen::Index(b) * T).transpose();
        gpos_.row(0).noalias() += g_x.row(Eigen::Index(b) * T);
        for (int i = 0; i < P; ++i) {
            gpos_.row(1 + i).noalias() += g_x.row(Eigen::Index(b) * T + 1 + i);
            g_patch_rows.row(Eigen::Index(b) * P + i) = g_x.row(Eigen::Index(b) * T + 1 + i);
        }
    }
    patch_embed_.gw.noalias() += ws.patch_rows.transpose() * g_patch_rows;
    patch_embed_.gb.noalias() += g_patch_rows.colwise().sum().transpose();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'D', 'L', 'D', 'L', 'C', 'K', 'P', '1'};

nlohmann::json vit_to_json(const ViTConfig& v) {
    return {{"input_channels", v.input_channels},   {"image_size", v.image_size},
            {"patch_size", v.patch_size},           {"hidden_size", v.hidden_size},
            {"num_layers", v.num_layers},           {"num_heads", v.num_heads},
            {"intermediate_size", v.intermediate_size},
            {"hidden_dropout", v.hidden_dropout},   {"attention_dropout", v.attention_dropout}};
}

ViTConfig vit_from_json(const nlohmann::json& j) {
    ViTConfig v;
    v.input_channels = j.at("input_channels");
    v.image_size = j.at("image_size");
    v.patch_size = j.at("patch_size");
    v.hidden_size = j.at("hidden_size");
    v.num_layers = j.at("num_layers");
    v.num_heads = j.at("num_heads");
    v.intermediate_size = j.at("intermediate_size");
    v.hidden_dropout = j.at("hidden_dropout");
    v.attention_dropout = j.at("attention_dropout");
    return v;
}

nlohmann::json neck_to_json(const NeckConfig& n) {
    return {{"layer_size", n.layer_size}, {"num_layers", n.num_layers}, {"dropout", n.dropout}};
}

NeckConfig neck_from_json(const nlohmann::json& j) {
    NeckConfig n;
    n.layer_size = j.at("layer_size");
    n.num_layers = j.at("num_layers");
    n.dropout = j.at("dropout");
    return n;
}

nlohmann::json head_to_json(const HeadConfig& h) {
    return {{"label_name", h.label_name},
            {"label_space",
             {{"lower_limit", h.label_space.lower_limit},
              {"upper_limit", h.label_space.upper_limit},
              {"num_bins", h.label_space.num_bins}}},
            {"label_sigma", h.label_sigma},
            {"mlp_layers", h.mlp_layers},
            {"mlp_layer_size", h.mlp_layer_size},
            {"dropout", h.dropout}};
}

HeadConfig head_from_json(const nlohmann::json& j) {
    HeadConfig h;
    h.label_name = j.at("label_name");
    h.label_space.lower_limit = j.at("label_space").at("lower_limit");
    h.label_space.upper_limit = j.at("label_space").at("upper_limit");
    h.label_space.num_bins = j.at("label_space").at("num_bins");
    h.label_sigma = j.at("label_sigma");
    h.mlp_layers = j.at("mlp_layers");
    h.mlp_layer_size = j.at("mlp_layer_size");
    h.dropout = j.at("dropout");
    return h;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["vit"] = vit_to_json(model.vit_);
    header["neck"] = neck_to_json(model.neck_);
    header["heads"] = nlohmann::json::array();
    for (const auto& h : model.head_cfgs_) header["heads"].push_back(head_to_json(h));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(kCkptMagic, sizeof(kCkptMagic));
    std::string hs = header.dump();
    write_u32(out, std::uint32_t(hs.size()));
    out.write(hs.data(), std::streamsize(hs.size()));
    write_u32(out, std::uint32_t(model.params_.size()));
    for (const auto& p : model.params_) {
        write_u32(out, std::uint32_t(p.name.size()));
        out.write(p.name.data(), std::streamsize(p.name.size()));
        write_u32(out, std::uint32_t(p.rows));
        write_u32(out, std::uint32_t(p.cols));
        out.write(reinterpret_cast<const char*>(p.value), std::streamsize(p.size * sizeof(double)));
    }
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: '" + path + "'");
    std::uint32_t hlen = read_u32(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), std::streamsize(hlen));
    if (!in) throw DataError("truncated checkpoint header in '" + path + "'");
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.at("format_version") != 1)
        throw DataError("unsupported checkpoint format version in '" + path + "'");

    std::vector<HeadConfig> heads;
    for (const auto& j : header.at("heads")) heads.push_back(head_from_json(j));
    Model model(vit_from_json(header.at("vit")), neck_from_json(header.at("neck")), std::move(heads), 0);

    std::uint32_t count = read_u32(in);
    if (count != model.params_.size()) throw DataError("checkpoint tensor count mismatch in '" + path + "'");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = read_u32(in);
        std::string name(nlen, '\0');
        in.read(name.data(), std::streamsize(nlen));
        std::uint32_t rows = read_u32(in);
        std::uint32_t cols = read_u32(in);
        auto& p = model.params_[i];
        if (name != p.name || int(rows) != p.rows || int(cols) != p.cols)
            throw DataError("checkpoint tensor mismatch at '" + name + "' in '" + path + "'");
        in.read(reinterpret_cast<char*>(p.value), std::streamsize(p.size * sizeof(double)));
    }
    if (!in) throw DataError("truncated checkpoint tensors in '" + path + "'");
    return model;
}

Model transfer_backbone(const Model& pretrained, std::vector<HeadConfig> new_heads, std::uint64_t seed) {
    Model model(pretrained.vit_, pretrained.neck_, std::move(new_heads), seed);
    std::size_t shared = 0;
    for (const auto& src : pretrained.params_) {
        if (src.owner == ParamOwner::kHead) continue;
        const auto& dst = model.params_[shared];
        if (dst.name != src.name || dst.rows != src.rows || dst.cols != src.cols)
            throw DataError("transfer_backbone: incompatible tensor '" + src.name + "'");
        std::copy(src.value, src.value + src.size, dst.value);
        ++shared;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Attention rollout
// ---------------------------------------------------------------------------

RolloutMap attention_rollout(const AttentionMaps& attentions) {
    if (attentions.empty()) throw DataError("attention rollout requires at least one layer");
    const Eigen::Index T = attentions[0].at(0).rows();
    Matrix rollout;
    for (std::size_t l = 0; l < attentions.size(); ++l) {
        const auto& layer = attentions[l];
        if (layer.empty()) throw DataError("attention layer without heads");
        Matrix mean = Matrix::Zero(T, T);
        for (const auto& head : layer) {
            if (head.rows() != T || head.cols() != T) throw ShapeError("inconsistent attention shapes");
            mean += head;
        }
        mean /= double(layer.size());
        mean += Matrix::Identity(T, T);
        for (Eigen::Index r = 0; r < T; ++r) mean.row(r) /= mean.row(r).sum();
        rollout = l == 0 ? mean : Matrix(mean * rollout);
    }
    const Eigen::Index patches = T - 1;
    const int side = int(std::lround(std::sqrt(double(patches))));
    if (Eigen::Index(side) * side != patches)
        throw ShapeError("token count is not a square patch grid plus class token");
    RolloutMap map;
    map.class_weight = rollout(0, 0);
    map.grid = Matrix(side, side);
    for (Eigen::Index i = 0; i < patches; ++i) map.grid(i / side, i % side) = rollout(0, 1 + i);
    return map;
}

}  // namespace dldl
