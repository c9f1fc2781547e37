#pragma once

// RGB-D segmentation network: two strided-conv patch embeddings with learned
// positional tables, a low-rank residual depth injection (token width reduced
// to C/4 and restored), a pre-norm transformer encoder, and a 1x1-conv
// decoder with bilinear upsampling to full resolution.
//
// Parameters live in an ordered name -> tensor registry; the registration
// order is the serialization order. The depth branch exists whenever
// rgb_only is false, even with the injection disabled, so toggling use_lspi
// changes the parameter count by exactly the injection's own parameters.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "depthmatch/common.hpp"
#include "depthmatch/tensor.hpp"

namespace dm {

template <typename S>
class ParamStore {
public:
    TensorT<S>& add(const std::string& name, TensorT<S> t) {
        if (index_.count(name)) fail("duplicate parameter name: " + name);
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<S>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) fail("unknown parameter name: " + name);
        return items_[it->second].second;
    }
    const TensorT<S>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail("unknown parameter name: " + name);
        return items_[it->second].second;
    }

    std::vector<std::pair<std::string, TensorT<S>>>& items() { return items_; }
    const std::vector<std::pair<std::string, TensorT<S>>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    std::int64_t total_scalars() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, TensorT<S>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct ModelConfig {
    int patch_size = 8;
    int embed_dim = 64;
    int encoder_blocks = 4;
    int num_heads = 4;
    int num_classes = 0;
    int pos_grid = 16;  // positional tables are stored at this grid and resized in use
    bool rgb_only = false;
    bool use_lspi = true;
    int lspi_stages = 1;

    void validate() const {
        if (patch_size < 1) fail("model config: patch_size must be >= 1");
        if (embed_dim < 4) fail("model config: embed_dim must be >= 4");
        if (embed_dim % 4 != 0) fail("model config: embed_dim must be divisible by 4");
        if (num_heads < 1 || embed_dim % num_heads != 0)
            fail("model config: num_heads must divide embed_dim");
        if (encoder_blocks < 1) fail("model config: encoder_blocks must be >= 1");
        if (num_classes < 2) fail("model config: num_classes must be >= 2");
        if (pos_grid < 1) fail("model config: pos_grid must be >= 1");
        if (rgb_only && use_lspi) fail("model config: rgb_only excludes use_lspi");
        if (lspi_stages < 1 || lspi_stages > encoder_blocks)
            fail("model config: lspi_stages must be in [1, encoder_blocks]");
    }
};

template <typename S>
class SegModelT {
public:
    SegModelT(const ModelConfig& cfg, std::uint64_t init_seed, bool requires_grad = true)
        : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, "model_init"));
        const std::int64_t C = cfg_.embed_dim;
        const std::int64_t pe = cfg_.patch_size;
        const std::int64_t pg = cfg_.pos_grid;
        const std::int64_t Cq = C / 4;

        auto tn = [&](Shape shape) {
            std::vector<S> d(std::size_t(numel_of(shape)));
            for (auto& v : d) v = S(rng.truncated_normal(0.02));
            return TensorT<S>::from_data(std::move(shape), std::move(d), requires_grad);
        };
        auto zeros = [&](Shape shape) { return TensorT<S>::zeros(std::move(shape), requires_grad); };
        auto ones = [&](Shape shape) { return TensorT<S>::full(std::move(shape), S(1), requires_grad); };

        params_.add("embed.rgb.weight", tn({C, 3, pe, pe}));
        params_.add("embed.rgb.bias", zeros({C}));
        params_.add("embed.rgb.pos", tn({C, pg, pg}));
        if (!cfg_.rgb_only) {
            params_.add("embed.depth.weight", tn({C, 1, pe, pe}));
            params_.add("embed.depth.bias", zeros({C}));
            params_.add("embed.depth.pos", tn({C, pg, pg}));
        }
        if (cfg_.use_lspi) {
            for (int s = 0; s < cfg_.lspi_stages; ++s) {
                const std::string p = strfmt("lspi.%d.", s);
                params_.add(p + "wr.weight", tn({C, Cq}));
                params_.add(p + "wr.bias", zeros({Cq}));
                params_.add(p + "wd.weight", tn({C, Cq}));
                params_.add(p + "wd.bias", zeros({Cq}));
                // zero-initialized restoring map: injection starts as identity
                params_.add(p + "wf.weight", zeros({Cq, C}));
                params_.add(p + "wf.bias", zeros({C}));
            }
        }
        for (int b = 0; b < cfg_.encoder_blocks; ++b) {
            const std::string p = strfmt("enc.%d.", b);
            params_.add(p + "ln1.gamma", ones({C}));
            params_.add(p + "ln1.beta", zeros({C}));
            params_.add(p + "attn.q.weight", tn({C, C}));
            params_.add(p + "attn.q.bias", zeros({C}));
            params_.add(p + "attn.k.weight", tn({C, C}));
            params_.add(p + "attn.k.bias", zeros({C}));
            params_.add(p + "attn.v.weight", tn({C, C}));
            params_.add(p + "attn.v.bias", zeros({C}));
            params_.add(p + "attn.proj.weight", tn({C, C}));
            params_.add(p + "attn.proj.bias", zeros({C}));
            params_.add(p + "ln2.gamma", ones({C}));
            params_.add(p + "ln2.beta", zeros({C}));
            params_.add(p + "mlp.fc1.weight", tn({C, 4 * C}));
            params_.add(p + "mlp.fc1.bias", zeros({4 * C}));
            params_.add(p + "mlp.fc2.weight", tn({4 * C, C}));
            params_.add(p + "mlp.fc2.bias", zeros({C}));
        }
        params_.add("dec.weight", tn({cfg_.num_classes, C, 1, 1}));
        params_.add("dec.bias", zeros({cfg_.num_classes}));
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }
    std::int64_t param_count() const { return params_.total_scalars(); }

    // Per-stage parameter cost of the depth injection: two C -> C/4 maps, one
    // C/4 -> C map, and their biases.
    static std::int64_t lspi_param_count(int C) {
        const std::int64_t Cq = C / 4;
        return 2 * (C * Cq) + Cq * C + (Cq + Cq + C);
    }

    // rgb [B,3,H,W], depth [B,1,H,W] (ignored and may be undefined when
    // rgb_only); H and W must be multiples of patch_size. Returns logits
    // [B,num_classes,H,W].
    TensorT<S> forward(const TensorT<S>& rgb, const TensorT<S>& depth) const {
        if (rgb.ndim() != 4 || rgb.dim(1) != 3)
            fail("model forward: rgb must be [B,3,H,W], got " + shape_str(rgb.shape()));
        const std::int64_t B = rgb.dim(0), H = rgb.dim(2), W = rgb.dim(3);
        const std::int64_t pe = cfg_.patch_size;
        if (H % pe != 0 || W % pe != 0)
            fail(strfmt("model forward: input %lldx%lld not divisible by patch size %lld",
                        (long long)H, (long long)W, (long long)pe));
        if (!cfg_.rgb_only) {
            if (!depth.defined() || depth.ndim() != 4 || depth.dim(1) != 1 || depth.dim(0) != B ||
                depth.dim(2) != H || depth.dim(3) != W)
                fail("model forward: depth must be [B,1,H,W] matching rgb");
        }
        const std::int64_t gh = H / pe, gw = W / pe;
        const std::int64_t N = gh * gw, C = cfg_.embed_dim;

        TensorT<S> x = patch_embed(rgb, "embed.rgb", gh, gw);
        TensorT<S> d;
        if (!cfg_.rgb_only) d = patch_embed(depth, "embed.depth", gh, gw);

        for (int b = 0; b < cfg_.encoder_blocks; ++b) {
            if (cfg_.use_lspi && b < cfg_.lspi_stages) x = lspi_inject(x, d, b);
            x = encoder_block(x, b);
        }

        // tokens back to a feature map, 1x1 conv to class logits, upsample
        TensorT<S> fmap = reshape(permute(x, {0, 2, 1}), {B, C, gh, gw});
        TensorT<S> logits = conv2d(fmap, params_.get("dec.weight"), 1, 0);
        logits = add(logits, reshape(params_.get("dec.bias"), {std::int64_t(cfg_.num_classes), 1, 1}));
        return bilinear_resize(logits, H, W);
    }

    // Eq-style residual injection: x + wf(wr(x) + wd(d)).
    TensorT<S> lspi_inject(const TensorT<S>& x, const TensorT<S>& d, int stage) const {
        if (!cfg_.use_lspi) fail("lspi_inject: injection disabled in this model");
        if (x.shape() != d.shape())
            fail("lspi_inject: token shapes differ, " + shape_str(x.shape()) + " vs " +
                 shape_str(d.shape()));
        const std::string p = strfmt("lspi.%d.", stage);
        TensorT<S> h = add(linear(x, p + "wr"), linear(d, p + "wd"));
        return add(linear(h, p + "wf"), x);
    }

private:
    // image [B,c,H,W] -> tokens [B,N,C] with bias and positional offsets
    TensorT<S> patch_embed(const TensorT<S>& im, const std::string& prefix, std::int64_t gh,
                           std::int64_t gw) const {
        const std::int64_t B = im.dim(0), C = cfg_.embed_dim;
        TensorT<S> f = conv2d(im, params_.get(prefix + ".weight"), cfg_.patch_size, 0);
        f = add(f, reshape(params_.get(prefix + ".bias"), {C, 1, 1}));
        TensorT<S> pos = reshape(params_.get(prefix + ".pos"), {1, C, cfg_.pos_grid, cfg_.pos_grid});
        f = add(f, bilinear_resize(pos, gh, gw));
        return permute(reshape(f, {B, C, gh * gw}), {0, 2, 1});
    }

    // tokens [B,N,Cin] x weight [Cin,Cout] + bias
    TensorT<S> linear(const TensorT<S>& x, const std::string& prefix) const {
        const auto& wgt = params_.get(prefix + ".weight");
        const std::int64_t B = x.dim(0), N = x.dim(1);
        TensorT<S> flat = reshape(x, {B * N, x.dim(2)});
        TensorT<S> y = add(matmul(flat, wgt), params_.get(prefix + ".bias"));
        return reshape(y, {B, N, wgt.dim(1)});
    }

    TensorT<S> encoder_block(const TensorT<S>& x, int block) const {
        const std::string p = strfmt("enc.%d.", block);
        TensorT<S> h = layer_norm(x, params_.get(p + "ln1.gamma"), params_.get(p + "ln1.beta"));
        TensorT<S> y = add(x, attention(h, p));
        TensorT<S> h2 = layer_norm(y, params_.get(p + "ln2.gamma"), params_.get(p + "ln2.beta"));
        TensorT<S> m = linear(h2, p + "mlp.fc1");
        m = linear(relu(m), p + "mlp.fc2");
        return add(y, m);
    }

    TensorT<S> attention(const TensorT<S>& x, const std::string& p) const {
        const std::int64_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
        const std::int64_t h = cfg_.num_heads, dh = C / h;
        auto split_heads = [&](const TensorT<S>& t) {
            // [B,N,C] -> [B*h, N, dh]
            return reshape(permute(reshape(t, {B, N, h, dh}), {0, 2, 1, 3}), {B * h, N, dh});
        };
        TensorT<S> q = split_heads(linear(x, p + "attn.q"));
        TensorT<S> k = split_heads(linear(x, p + "attn.k"));
        TensorT<S> v = split_heads(linear(x, p + "attn.v"));
        TensorT<S> scores = mul_scalar(bmm(q, permute(k, {0, 2, 1})), S(1.0 / std::sqrt(double(dh))));
        TensorT<S> att = softmax(scores, 2);
        TensorT<S> ctx = bmm(att, v);  // [B*h, N, dh]
        ctx = reshape(permute(reshape(ctx, {B, h, N, dh}), {0, 2, 1, 3}), {B, N, C});
        return linear(ctx, p + "attn.proj");
    }

    ModelConfig cfg_;
    ParamStore<S> params_;
};

using SegModel = SegModelT<float>;

}  // namespace dm
