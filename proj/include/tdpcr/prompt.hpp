#pragma once

#include "tdpcr/nn.hpp"

namespace tdpcr {

// Degradation prompt generator: three 3x3 convs over the cloudy optical
// input, smooth-gated activation after the first two, none after the last
// so the prompt stays unbounded and sign-carrying.
template <typename T>
class PromptGenerator {
public:
    static constexpr int kHiddenChannels = 16;

    PromptGenerator() = default;
    PromptGenerator(ParamStore<T>& st, const std::string& group, int in_bands, int prompt_channels, const Rng& rng)
        : in_bands_(in_bands) {
        conv1_ = nn::Conv2d<T>(st, group, group + "/conv1", in_bands, kHiddenChannels, 3, 1, 1, rng);
        conv2_ = nn::Conv2d<T>(st, group, group + "/conv2", kHiddenChannels, kHiddenChannels, 3, 1, 1, rng);
        conv3_ = nn::Conv2d<T>(st, group, group + "/conv3", kHiddenChannels, prompt_channels, 3, 1, 1, rng);
    }

    Value<T>* forward(Tape<T>& tp, Value<T>* cloudy) const {
        if (cloudy->val.shape().size() != 4 || cloudy->val.shape()[1] != in_bands_)
            throw ShapeError(strf("generate_prompt: expected %d-band input, got %s", in_bands_,
                                  cloudy->val.shape_str().c_str()));
        Value<T>* p = ag::gelu(tp, conv1_.forward(tp, cloudy));
        p = ag::gelu(tp, conv2_.forward(tp, p));
        return conv3_.forward(tp, p);
    }

private:
    int in_bands_ = 0;
    nn::Conv2d<T> conv1_, conv2_, conv3_;
};

// Bilinear prompt resize to a stage resolution (align_corners disabled).
template <typename T>
Value<T>* resize_prompt(Tape<T>& tp, Value<T>* prompt, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0)
        throw ArgumentError(strf("resize_prompt: non-positive target %dx%d", target_h, target_w));
    return ag::bilinear_resize(tp, prompt, target_h, target_w);
}

}  // namespace tdpcr
