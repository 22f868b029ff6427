#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ci2p/model_desc.hpp"

namespace ci2p {

// Counting convention: one multiply-accumulate is one FLOP. Matmul [m,k]x[k,n]
// costs m*k*n; conv costs kh*kw*(Cin/groups)*Cout*Hout*Wout. Bias, norm,
// softmax, and GDN costs are excluded (sub-percent at these scales).

struct FlopsRow {
    std::string component;
    std::int64_t flops = 0;
    std::int64_t params = 0;
};

struct FlopsReport {
    std::string variant;
    int image_size = 0;
    std::vector<FlopsRow> rows;

    std::int64_t total_flops() const;
    std::int64_t total_params() const;
};

// 4*hw*C^2 + 2*(hw)^2*C, the cost of one multi-head self-attention layer over
// hw tokens of width C (qkv + output projections, plus the two [hw,hw] score
// and mixing products).
std::int64_t msa_flops(std::int64_t hw, std::int64_t c);

std::int64_t matmul_flops(std::int64_t m, std::int64_t k, std::int64_t n);
std::int64_t conv_flops(int kh, int kw, int cin_per_group, int cout, int hout, int wout);
std::int64_t mlp_flops(std::int64_t hw, std::int64_t c, std::int64_t hidden);

// Per-component breakdown at the given input resolution. Parameter counts are
// exact and match the ParamStore of build_model for the same desc.
FlopsReport model_flops(const ModelDesc& desc, int image_size);

std::int64_t model_params(const ModelDesc& desc);

// 1 - total/baseline_total.
double reduction_vs(const FlopsReport& report, const FlopsReport& baseline);

// Totals and reductions for the three default variants at each size.
// format is "csv" (variant,image_size,component,flops,params; includes a
// "total" row per variant) or "table" (aligned text).
std::string reduction_table(const std::vector<int>& sizes, const std::string& format);

}  // namespace ci2p
