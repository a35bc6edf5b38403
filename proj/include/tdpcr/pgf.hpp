#pragma once

#include "tdpcr/nn.hpp"

namespace tdpcr {

enum class BranchMode { global_only, local_only, both };

inline const char* branch_mode_name(BranchMode m) {
    switch (m) {
        case BranchMode::global_only: return "global_only";
        case BranchMode::local_only: return "local_only";
        default: return "both";
    }
}

// Prompt-Guided Fusion. Global channel logits from pooled joint features,
// local spatial logits from the resized prompt, softmax over the two
// modalities, convex blend, residual refinement back onto the optical
// stream. With psi's tail zero-initialized the block starts as identity
// on the optical stream.
template <typename T>
class PgfBlock {
public:
    // Test hook: forces alpha[opt] = 1 (equivalent to l[sar] = -inf).
    enum class Force { none, optical_only };

    struct Trace {
        Value<T>* out = nullptr;        // refined optical stream
        Value<T>* fused = nullptr;      // convex blend, [B,C,H,W]
        Value<T>* alpha_opt = nullptr;  // nullptr unless want_trace
        Value<T>* alpha_sar = nullptr;  // nullptr unless want_trace
    };

    PgfBlock() = default;
    PgfBlock(ParamStore<T>& st, const std::string& group, const std::string& prefix, int channels,
             int prompt_channels, BranchMode mode, const Rng& rng)
        : channels_(channels), mode_(mode) {
        const int hidden = std::max(channels / 16, 4);  // bottleneck floor for narrow stages
        if (mode != BranchMode::local_only) {
            fc1_ = nn::Linear<T>(st, group, prefix + ".fc1", channels, hidden, rng);
            fc2_ = nn::Linear<T>(st, group, prefix + ".fc2", hidden, 2 * channels, rng);
        }
        if (mode != BranchMode::global_only) {
            local_dw_ = nn::DwConv2d<T>(st, group, prefix + ".local_dw", prompt_channels, 3, 1, rng);
            local_proj_ = nn::Conv2d<T>(st, group, prefix + ".local_proj", prompt_channels, 2 * channels, 1, 1, 0, rng);
        }
        psi1_ = nn::Conv2d<T>(st, group, prefix + ".psi1", channels, channels, 1, 1, 0, rng);
        psi2_ = nn::Conv2d<T>(st, group, prefix + ".psi2", channels, channels, 1, 1, 0, rng, /*zero_init=*/true);
    }

    // Modality logits from pooled channel context: [B, 2C], opt rows first.
    Value<T>* global_logits(Tape<T>& tp, Value<T>* f_opt, Value<T>* f_sar) const {
        check_same_shape(f_opt->val, f_sar->val, "pgf.global_branch");
        Value<T>* z = ag::gap(tp, ag::add(tp, f_opt, f_sar));
        return fc2_.forward(tp, ag::gelu(tp, fc1_.forward(tp, z)));
    }

    // Spatial modality logits from the resized prompt: [B, 2C, H, W].
    Value<T>* local_logits(Tape<T>& tp, Value<T>* p_resized) const {
        return local_proj_.forward(tp, local_dw_.forward(tp, p_resized));
    }

    Trace forward(Tape<T>& tp, Value<T>* f_opt, Value<T>* f_sar, Value<T>* p_resized,
                  bool want_trace = false) const {
        check_same_shape(f_opt->val, f_sar->val, "pgf.fuse");
        const auto& fs = f_opt->val.shape();
        if (fs.size() != 4 || fs[1] != channels_)
            throw ShapeError(strf("pgf.fuse: expected %d feature channels, got %s", channels_,
                                  f_opt->val.shape_str().c_str()));
        const int H = fs[2], W = fs[3];
        if (mode_ != BranchMode::global_only) {
            const auto& ps = p_resized->val.shape();
            if (ps.size() != 4 || ps[2] != H || ps[3] != W)
                throw ShapeError(strf("pgf.fuse: prompt %s does not match feature %dx%d (resize_prompt first)",
                                      p_resized->val.shape_str().c_str(), H, W));
        }

        Trace tr;
        Value<T>* alpha_opt;
        Value<T>* diff = nullptr;  // l[opt] - l[sar]
        if (force_ == Force::optical_only) {
            alpha_opt = tp.make(Tensor<T>::full({fs[0], channels_, H, W}, T(1)));
        } else {
            Value<T>* logits = nullptr;  // [B, 2C, H, W]
            switch (mode_) {
                case BranchMode::both:
                    logits = ag::add_bcast_chan(tp, local_logits(tp, p_resized), global_logits(tp, f_opt, f_sar));
                    break;
                case BranchMode::global_only:
                    logits = ag::broadcast_chan(tp, global_logits(tp, f_opt, f_sar), H, W);
                    break;
                case BranchMode::local_only:
                    logits = local_logits(tp, p_resized);
                    break;
            }
            for (size_t i = 0; i < logits->val.size(); ++i)
                if (!std::isfinite(static_cast<double>(logits->val[i])))
                    throw NumericError("pgf.fuse: non-finite fusion logits");
            // Two-way softmax with max subtraction reduces to the stable
            // sigmoid of the logit difference; shift invariance is exact.
            diff = ag::sub(tp, ag::slice_chan(tp, logits, 0, channels_), ag::slice_chan(tp, logits, channels_, channels_));
            alpha_opt = ag::sigmoid(tp, diff);
        }
        tr.fused = ag::lerp(tp, f_opt, f_sar, alpha_opt);
        Value<T>* r = psi1_.forward(tp, tr.fused);
        r = ag::gelu(tp, r);
        r = psi2_.forward(tp, r);
        tr.out = ag::add(tp, f_opt, r);
        if (want_trace) {
            tr.alpha_opt = alpha_opt;
            tr.alpha_sar = diff ? ag::sigmoid(tp, ag::mul_scalar(tp, diff, T(-1)))
                                : tp.make(Tensor<T>(alpha_opt->val.shape()));
        }
        return tr;
    }

    void set_force(Force f) { force_ = f; }
    BranchMode mode() const { return mode_; }
    int channels() const { return channels_; }

private:
    int channels_ = 0;
    BranchMode mode_ = BranchMode::both;
    Force force_ = Force::none;
    nn::Linear<T> fc1_, fc2_;
    nn::DwConv2d<T> local_dw_;
    nn::Conv2d<T> local_proj_;
    nn::Conv2d<T> psi1_, psi2_;
};

}  // namespace tdpcr
