#pragma once

#include <array>
#include <memory>

#include "tdpcr/backbone.hpp"
#include "tdpcr/pgf.hpp"
#include "tdpcr/prompt.hpp"

namespace tdpcr {

struct NetworkConfig {
    std::vector<int> stage_channels = {32, 64, 128, 256};
    std::vector<int> naf_depths = {2, 2, 2, 2};
    int prompt_channels = 8;
    int optical_bands = 13;
    int sar_bands = 2;
    int num_classes = 6;
    int seg_unified_channels = 32;
    BranchMode branch = BranchMode::both;

    int num_stages() const { return static_cast<int>(stage_channels.size()); }
    int spatial_divisor() const { return 1 << (num_stages() - 1); }

    void validate() const {
        if (stage_channels.empty() || stage_channels.size() != naf_depths.size())
            throw ArgumentError("NetworkConfig: stage_channels and naf_depths must have equal, nonzero length");
        for (size_t i = 1; i < stage_channels.size(); ++i)
            if (stage_channels[i] != 2 * stage_channels[i - 1])
                throw ArgumentError("NetworkConfig: stage channels must double per stage");
        if (prompt_channels <= 0 || optical_bands <= 0 || sar_bands <= 0 || num_classes <= 0 ||
            seg_unified_channels <= 0)
            throw ArgumentError("NetworkConfig: all dimensions must be positive");
        for (int d : naf_depths)
            if (d <= 0) throw ArgumentError("NetworkConfig: naf_depths must be positive");
    }
};

// Canonical parameter group names (freeze policy operates on these).
namespace groups {
inline constexpr const char* kOpticalEncoder = "optical_encoder";
inline constexpr const char* kSarEncoder = "sar_encoder";
inline constexpr const char* kPromptGenerator = "prompt_generator";
inline constexpr const char* kPgfBlocks = "pgf_blocks";
inline constexpr const char* kSharedDecoder = "shared_decoder";
inline constexpr const char* kSegHead = "seg_head";
inline const std::vector<std::string> kAll = {kOpticalEncoder, kSarEncoder,   kPromptGenerator,
                                              kPgfBlocks,      kSharedDecoder, kSegHead};
}  // namespace groups

template <typename T>
struct ForwardOut {
    Value<T>* restored = nullptr;    // [B, bands, H, W]
    Value<T>* seg_logits = nullptr;  // [B, K, H, W] when requested
    Value<T>* prompt = nullptr;      // [B, C_p, H, W]
};

// TDP-CR: decoupled optical/SAR encoders with per-stage prompt-guided
// fusion, a shared reconstruction decoder with a global residual onto the
// cloudy input, and a multi-scale segmentation head over decoder features.
template <typename T>
class TdpcrNetwork {
public:
    explicit TdpcrNetwork(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng = Rng(seed).stream("init");
        const int L = cfg.num_stages();
        const int c0 = cfg.stage_channels[0];

        prompt_gen_ = PromptGenerator<T>(store_, groups::kPromptGenerator, cfg.optical_bands, cfg.prompt_channels,
                                         rng.stream("prompt"));
        intro_opt_ = nn::Conv2d<T>(store_, groups::kOpticalEncoder, "optical_encoder/intro", cfg.optical_bands, c0,
                                   3, 1, 1, rng.stream("oi"));
        intro_sar_ = nn::Conv2d<T>(store_, groups::kSarEncoder, "sar_encoder/intro", cfg.sar_bands, c0, 3, 1, 1,
                                   rng.stream("si"));

        opt_blocks_.resize(L);
        sar_blocks_.resize(L);
        for (int l = 0; l < L; ++l) {
            BlockConfig bc{cfg.stage_channels[l], 2, 2};
            for (int i = 0; i < cfg.naf_depths[l]; ++i) {
                opt_blocks_[l].emplace_back(store_, groups::kOpticalEncoder,
                                            strf("optical_encoder/s%d.b%d", l, i), bc, rng.stream("oe"));
                sar_blocks_[l].emplace_back(store_, groups::kSarEncoder, strf("sar_encoder/s%d.b%d", l, i), bc,
                                            rng.stream("se"));
            }
            pgf_.emplace_back(store_, groups::kPgfBlocks, strf("pgf_blocks/s%d", l), cfg.stage_channels[l],
                              cfg.prompt_channels, cfg.branch, rng.stream("pgf"));
            if (l + 1 < L) {
                opt_down_.emplace_back(store_, groups::kOpticalEncoder, strf("optical_encoder/down%d", l),
                                       cfg.stage_channels[l], cfg.stage_channels[l + 1], 3, 2, 1, rng.stream("od"));
                sar_down_.emplace_back(store_, groups::kSarEncoder, strf("sar_encoder/down%d", l),
                                       cfg.stage_channels[l], cfg.stage_channels[l + 1], 3, 2, 1, rng.stream("sd"));
            }
        }

        // Decoder: stage 0 refines the deepest fused feature; each later
        // stage upsamples (1x1 conv to 2x channels + pixel shuffle, net /2),
        // adds the matching fused encoder skip, then runs NAFBlocks.
        dec_blocks_.resize(L);
        for (int i = 0; i < L; ++i) {
            const int c = cfg.stage_channels[L - 1 - i];
            if (i > 0)
                dec_up_.emplace_back(store_, groups::kSharedDecoder, strf("shared_decoder/up%d", i),
                                     2 * c, 4 * c, 1, 1, 0, rng.stream("du"));
            BlockConfig bc{c, 2, 2};
            for (int j = 0; j < cfg.naf_depths[L - 1 - i]; ++j)
                dec_blocks_[i].emplace_back(store_, groups::kSharedDecoder, strf("shared_decoder/s%d.b%d", i, j), bc,
                                            rng.stream("de"));
        }
        final_conv_ = nn::Conv2d<T>(store_, groups::kSharedDecoder, "shared_decoder/final", c0, cfg.optical_bands,
                                    3, 1, 1, rng.stream("df"), /*zero_init=*/true);

        for (int i = 0; i < L; ++i)
            seg_proj_.emplace_back(store_, groups::kSegHead, strf("seg_head/proj%d", i),
                                   cfg.stage_channels[L - 1 - i], cfg.seg_unified_channels, 3, 1, 1,
                                   rng.stream("sp"));
        seg_classify_ = nn::Conv2d<T>(store_, groups::kSegHead, "seg_head/classify", L * cfg.seg_unified_channels,
                                      cfg.num_classes, 1, 1, 0, rng.stream("sc"));
    }

    ForwardOut<T> forward(Tape<T>& tp, Value<T>* ic, Value<T>* is, bool with_seg, bool want_pgf_trace = false) {
        const auto& s = ic->val.shape();
        if (s.size() != 4) throw ShapeError("forward: optical input must be [B,bands,H,W]");
        if (s[1] != cfg_.optical_bands)
            throw ShapeError(strf("forward: expected %d optical bands, got %d", cfg_.optical_bands, s[1]));
        const auto& ss = is->val.shape();
        if (ss.size() != 4 || ss[1] != cfg_.sar_bands)
            throw ShapeError(strf("forward: expected %d SAR bands", cfg_.sar_bands));
        if (ss[0] != s[0] || ss[2] != s[2] || ss[3] != s[3])
            throw ShapeError("forward: optical and SAR spatial/batch dims differ");
        const int H = s[2], W = s[3], div = cfg_.spatial_divisor();
        if (H % div != 0 || W % div != 0)
            throw ArgumentError(strf("forward: spatial dims %dx%d not divisible by %d", H, W, div));

        const int L = cfg_.num_stages();
        last_trace_.clear();

        ForwardOut<T> out;
        out.prompt = prompt_gen_.forward(tp, ic);

        Value<T>* fo = intro_opt_.forward(tp, ic);
        Value<T>* fs = intro_sar_.forward(tp, is);
        std::vector<Value<T>*> skips(L);
        int h = H, w = W;
        for (int l = 0; l < L; ++l) {
            for (auto& blk : opt_blocks_[l]) fo = blk.forward(tp, fo);
            for (auto& blk : sar_blocks_[l]) fs = blk.forward(tp, fs);
            Value<T>* pl = resize_prompt(tp, out.prompt, h, w);
            auto tr = pgf_[l].forward(tp, fo, fs, pl, want_pgf_trace);
            if (want_pgf_trace) last_trace_.push_back(tr);
            skips[l] = tr.out;
            if (l + 1 < L) {
                fo = opt_down_[l].forward(tp, skips[l]);
                fs = sar_down_[l].forward(tp, fs);
                h /= 2;
                w /= 2;
            }
        }

        Value<T>* d = skips[L - 1];
        dec_feats_.assign(L, nullptr);
        for (int i = 0; i < L; ++i) {
            if (i > 0) {
                d = ag::pixel_shuffle2(tp, dec_up_[i - 1].forward(tp, d));
                d = ag::add(tp, d, skips[L - 1 - i]);
            }
            for (auto& blk : dec_blocks_[i]) d = blk.forward(tp, d);
            dec_feats_[i] = d;
        }

        out.restored = ag::add(tp, ic, final_conv_.forward(tp, d));
        if (with_seg) out.seg_logits = seg_head(tp, dec_feats_, H, W);
        return out;
    }

    // Multi-scale aggregation head: project each decoder scale to the
    // unified width, upsample to full resolution, concatenate, 1x1 classify.
    Value<T>* seg_head(Tape<T>& tp, const std::vector<Value<T>*>& feats, int H, int W) {
        if (feats.empty()) throw ArgumentError("seg_head: empty feature list");
        std::vector<Value<T>*> ups;
        for (size_t i = 0; i < feats.size(); ++i) {
            Value<T>* u = seg_proj_[i].forward(tp, feats[i]);
            ups.push_back(ag::bilinear_resize(tp, u, H, W));
        }
        return seg_classify_.forward(tp, ag::concat_chan(tp, ups));
    }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    const NetworkConfig& config() const { return cfg_; }

    std::vector<PgfBlock<T>>& pgf_blocks() { return pgf_; }
    const std::vector<typename PgfBlock<T>::Trace>& last_pgf_trace() const { return last_trace_; }
    const std::vector<Value<T>*>& last_decoder_features() const { return dec_feats_; }
    PromptGenerator<T>& prompt_generator() { return prompt_gen_; }

    void set_force_all(typename PgfBlock<T>::Force f) {
        for (auto& p : pgf_) p.set_force(f);
    }

private:
    NetworkConfig cfg_;
    ParamStore<T> store_;
    PromptGenerator<T> prompt_gen_;
    nn::Conv2d<T> intro_opt_, intro_sar_;
    std::vector<std::vector<NafBlock<T>>> opt_blocks_, sar_blocks_, dec_blocks_;
    std::vector<PgfBlock<T>> pgf_;
    std::vector<nn::Conv2d<T>> opt_down_, sar_down_, dec_up_;
    nn::Conv2d<T> final_conv_;
    std::vector<nn::Conv2d<T>> seg_proj_;
    nn::Conv2d<T> seg_classify_;
    std::vector<typename PgfBlock<T>::Trace> last_trace_;
    std::vector<Value<T>*> dec_feats_;
};

// count_parameters: exact scalar count over selected groups (empty -> 0).
template <typename T>
size_t count_parameters(const ParamStore<T>& st, const std::vector<std::string>& group_filter) {
    return st.count(group_filter);
}
template <typename T>
size_t count_parameters(const ParamStore<T>& st) {
    return st.count_all();
}

// Analytic FLOP estimate (2 * MACs for convolutions and fully connected
// layers) for one forward pass at the given input size.
inline double estimate_flops(const NetworkConfig& cfg, int H, int W, bool include_seg = true) {
    cfg.validate();
    auto conv = [](double k, double cin, double cout, double h, double w) { return 2.0 * k * k * cin * cout * h * w; };
    auto dconv = [](double k, double c, double h, double w) { return 2.0 * k * k * c * h * w; };
    auto fc = [](double cin, double cout) { return 2.0 * cin * cout; };

    const int L = cfg.num_stages();
    double total = 0.0;
    // prompt generator at input resolution
    total += conv(3, cfg.optical_bands, PromptGenerator<float>::kHiddenChannels, H, W);
    total += conv(3, PromptGenerator<float>::kHiddenChannels, PromptGenerator<float>::kHiddenChannels, H, W);
    total += conv(3, PromptGenerator<float>::kHiddenChannels, cfg.prompt_channels, H, W);
    total += conv(3, cfg.optical_bands, cfg.stage_channels[0], H, W);
    total += conv(3, cfg.sar_bands, cfg.stage_channels[0], H, W);

    auto naf = [&](double c, double h, double w) {
        double f = 0.0;
        f += conv(1, c, 2 * c, h, w);   // expand
        f += dconv(3, 2 * c, h, w);     // depthwise
        f += fc(c, c);                  // channel attention
        f += conv(1, c, c, h, w);       // project back
        f += conv(1, c, 2 * c, h, w);   // ffn expand
        f += conv(1, c, c, h, w);       // ffn project
        return f;
    };

    int h = H, w = W;
    for (int l = 0; l < L; ++l) {
        const double c = cfg.stage_channels[l];
        total += 2.0 * cfg.naf_depths[l] * naf(c, h, w);  // both streams
        // PGF
        const double hidden = std::max(cfg.stage_channels[l] / 16, 4);
        if (cfg.branch != BranchMode::local_only) total += fc(c, hidden) + fc(hidden, 2 * c);
        if (cfg.branch != BranchMode::global_only)
            total += dconv(3, cfg.prompt_channels, h, w) + conv(1, cfg.prompt_channels, 2 * c, h, w);
        total += 2.0 * conv(1, c, c, h, w);  // psi
        if (l + 1 < L) {
            total += 2.0 * conv(3, c, 2 * c, h / 2.0, w / 2.0);  // both stream downsamples
            h /= 2;
            w /= 2;
        }
    }
    for (int i = 0; i < L; ++i) {
        const double c = cfg.stage_channels[L - 1 - i];
        if (i > 0) {
            total += conv(1, 2 * c, 4 * c, h, w);  // upsample projection at source res
            h *= 2;
            w *= 2;
        }
        total += cfg.naf_depths[L - 1 - i] * naf(c, h, w);
    }
    total += conv(3, cfg.stage_channels[0], cfg.optical_bands, H, W);
    if (include_seg) {
        int sh = H >> (L - 1), sw = W >> (L - 1);
        for (int i = 0; i < L; ++i) {
            total += conv(3, cfg.stage_channels[L - 1 - i], cfg.seg_unified_channels, sh, sw);
            sh *= 2;
            sw *= 2;
        }
        total += conv(1, L * cfg.seg_unified_channels, cfg.num_classes, H, W);
    }
    return total;
}

}  // namespace tdpcr
