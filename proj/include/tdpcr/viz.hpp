#pragma once

#include <string>
#include <vector>

#include "tdpcr/data.hpp"

namespace tdpcr {

// Binary P6 portable pixmap. rgb is [H,W,3] uint8.
void write_ppm(const std::string& path, const Tensor<uint8_t>& rgb);

// 13-band [0,1] imagery -> display RGB using three visible bands.
Tensor<uint8_t> optical_to_rgb(const Tensor<float>& bands13, double gain = 2.0);

// fixed 6-class palette
Tensor<uint8_t> labels_to_rgb(const Tensor<uint8_t>& labels);

Tensor<uint8_t> gray_to_rgb(const Tensor<float>& gray);

// side-by-side panels (same height) into one image
Tensor<uint8_t> hstack_rgb(const std::vector<Tensor<uint8_t>>& panels, int gap = 2);

// cloudy | restored | clear | labels | predicted
Tensor<uint8_t> compose_eval_strip(const SampleRecord& s, const Tensor<float>& restored13,
                                   const Tensor<uint8_t>& predicted);

struct PromptPca {
    Tensor<float> rgb;            // [H,W,3] in [0,1], top-3 components min-max scaled
    bool degenerate = false;      // constant prompt: mid-gray + warning
    std::vector<double> eigenvalues;  // descending, all C_p of them
    Tensor<float> components;     // [C_p, C_p], rows are eigenvectors (descending)
    Tensor<float> mean;           // [C_p]
};

// Fit PCA over the pooled pixels of one or more prompt maps.
PromptPca fit_prompt_pca(const std::vector<const Tensor<float>*>& prompts);

// Project one prompt map onto the top-3 fitted components, [H,W,3] in [0,1].
Tensor<float> pca_project_rgb(const PromptPca& fit, const Tensor<float>& prompt);

// PCA of one prompt map over its own pixels (per-image fitting scope).
PromptPca prompt_pca(const Tensor<float>& prompt);  // [C_p,H,W], C_p >= 3

}  // namespace tdpcr
