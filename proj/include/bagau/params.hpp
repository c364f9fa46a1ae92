#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bagau/tensor.hpp"

namespace bagau {

template <typename T>
struct NamedTensor {
    std::string name;
    /// Owning block, e.g. "seg.enc2" or "mam1".
    std::string block;
    nn::Tensor<T> value;
};

/// All learnable tensors of an instantiated model plus its non-learnable
/// buffers (batch-norm running statistics). Registration order is part of
/// the contract: it fixes initialization order and checkpoint layout.
template <typename T>
class ParameterSet {
public:
    int add_param(std::string name, std::string block, nn::Shape4 shape);
    int add_buffer(std::string name, std::string block, nn::Shape4 shape, T fill);

    [[nodiscard]] std::vector<NamedTensor<T>>& params() { return params_; }
    [[nodiscard]] const std::vector<NamedTensor<T>>& params() const { return params_; }
    [[nodiscard]] std::vector<NamedTensor<T>>& buffers() { return buffers_; }
    [[nodiscard]] const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

    [[nodiscard]] nn::Tensor<T>& param(int i) { return params_.at(i).value; }
    [[nodiscard]] const nn::Tensor<T>& param(int i) const { return params_.at(i).value; }
    [[nodiscard]] nn::Tensor<T>& buffer(int i) { return buffers_.at(i).value; }
    [[nodiscard]] const nn::Tensor<T>& buffer(int i) const { return buffers_.at(i).value; }

    [[nodiscard]] std::optional<int> find_param(const std::string& name) const;
    [[nodiscard]] std::optional<int> find_buffer(const std::string& name) const;
    /// Throws std::out_of_range for unknown names.
    [[nodiscard]] const nn::Tensor<T>& get(const std::string& name) const;

    /// Number of learnable scalars.
    [[nodiscard]] std::size_t scalar_count() const;
    [[nodiscard]] bool all_finite() const;
    /// Zero tensors shaped like each learnable parameter.
    [[nodiscard]] std::vector<nn::Tensor<T>> zeros_like() const;

    template <typename U>
    [[nodiscard]] ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& p : params_) {
            out.add_param(p.name, p.block, p.value.shape());
            out.param(static_cast<int>(out.params().size()) - 1) = p.value.template cast<U>();
        }
        for (const auto& b : buffers_) {
            out.add_buffer(b.name, b.block, b.value.shape(), U(0));
            out.buffer(static_cast<int>(out.buffers().size()) - 1) = b.value.template cast<U>();
        }
        return out;
    }

private:
    std::vector<NamedTensor<T>> params_;
    std::vector<NamedTensor<T>> buffers_;
    std::map<std::string, int> param_index_;
    std::map<std::string, int> buffer_index_;
};

}  // namespace bagau
