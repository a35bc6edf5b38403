#pragma once

#include "tdpcr/nn.hpp"

namespace tdpcr {

struct BlockConfig {
    int channels = 0;
    int dw_expansion = 2;
    int ffn_expansion = 2;

    void validate() const {
        if (channels <= 0) throw ArgumentError("BlockConfig: channels must be positive");
        if (dw_expansion < 1 || ffn_expansion < 1) throw ArgumentError("BlockConfig: expansions must be >= 1");
        if ((channels * dw_expansion) % 2 != 0 || (channels * ffn_expansion) % 2 != 0)
            throw ArgumentError("BlockConfig: expanded width must be even (SimpleGate halves channels)");
    }
};

// NAFBlock: two residual sub-paths, the multiplicative gate is the only
// nonlinearity. Residual scales start at zero, so a fresh block is the
// identity map.
template <typename T>
class NafBlock {
public:
    NafBlock() = default;
    NafBlock(ParamStore<T>& st, const std::string& group, const std::string& prefix, const BlockConfig& cfg,
             const Rng& rng)
        : channels_(cfg.channels) {
        cfg.validate();
        const int c = cfg.channels;
        const int dwc = c * cfg.dw_expansion;
        const int gate_c = dwc / 2;
        const int ffnc = c * cfg.ffn_expansion;
        ln1_ = nn::LayerNorm2d<T>(st, group, prefix + ".ln1", c);
        conv1_ = nn::Conv2d<T>(st, group, prefix + ".conv1", c, dwc, 1, 1, 0, rng);
        dw_ = nn::DwConv2d<T>(st, group, prefix + ".dw", dwc, 3, 1, rng);
        sca_ = nn::Linear<T>(st, group, prefix + ".sca", gate_c, gate_c, rng);
        conv3_ = nn::Conv2d<T>(st, group, prefix + ".conv3", gate_c, c, 1, 1, 0, rng);
        beta_ = nn::ChannelScale<T>(st, group, prefix + ".beta", c);
        ln2_ = nn::LayerNorm2d<T>(st, group, prefix + ".ln2", c);
        conv4_ = nn::Conv2d<T>(st, group, prefix + ".conv4", c, ffnc, 1, 1, 0, rng);
        conv5_ = nn::Conv2d<T>(st, group, prefix + ".conv5", ffnc / 2, c, 1, 1, 0, rng);
        gamma_ = nn::ChannelScale<T>(st, group, prefix + ".gamma", c);
    }

    Value<T>* forward(Tape<T>& tp, Value<T>* x) const {
        if (x->val.shape().size() != 4 || x->val.shape()[1] != channels_)
            throw ShapeError(strf("naf_block: expected %d channels, got input %s", channels_,
                                  x->val.shape_str().c_str()));
        Value<T>* t = ln1_.forward(tp, x);
        t = conv1_.forward(tp, t);
        t = dw_.forward(tp, t);
        t = ag::simple_gate(tp, t);
        Value<T>* att = ag::gap(tp, t);
        att = sca_.forward(tp, att);
        t = ag::scale_chan(tp, t, att);
        t = conv3_.forward(tp, t);
        t = beta_.forward(tp, t);
        Value<T>* y = ag::add(tp, x, t);

        Value<T>* u = ln2_.forward(tp, y);
        u = conv4_.forward(tp, u);
        u = ag::simple_gate(tp, u);
        u = conv5_.forward(tp, u);
        u = gamma_.forward(tp, u);
        return ag::add(tp, y, u);
    }

    int channels() const { return channels_; }

private:
    int channels_ = 0;
    nn::LayerNorm2d<T> ln1_, ln2_;
    nn::Conv2d<T> conv1_, conv3_, conv4_, conv5_;
    nn::DwConv2d<T> dw_;
    nn::Linear<T> sca_;
    nn::ChannelScale<T> beta_, gamma_;
};

}  // namespace tdpcr
