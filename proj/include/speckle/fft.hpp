#pragma once

// Thin FFTW wrapper: in-place, unnormalized, FFT-native ordering. Plans are
// created once per (shape, direction) under a mutex; execution is thread-safe.

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <tuple>

#include <fftw3.h>

#include "speckle/error.hpp"

namespace speckle {

/// Transform shape: n0 points (1-D) or n1 x n0 (2-D, row-major, n1 rows) when n1 > 0.
struct FftShape {
    int n0 = 0;
    int n1 = 0;
    [[nodiscard]] std::size_t size() const {
        return n1 > 0 ? static_cast<std::size_t>(n0) * n1 : static_cast<std::size_t>(n0);
    }
    friend auto operator<=>(const FftShape&, const FftShape&) = default;
};

enum class FftDirection { forward = FFTW_FORWARD, backward = FFTW_BACKWARD };

namespace detail {

class FftPlanCache {
public:
    static FftPlanCache& instance() {
        static FftPlanCache cache;
        return cache;
    }

    fftw_plan get(FftShape shape, FftDirection dir) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_tuple(shape.n0, shape.n1, static_cast<int>(dir));
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        auto* buf = fftw_alloc_complex(shape.size());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fftw_plan p = shape.n1 > 0 ? fftw_plan_dft_2d(shape.n1, shape.n0, buf, buf, static_cast<int>(dir), flags)
                                   : fftw_plan_dft_1d(shape.n0, buf, buf, static_cast<int>(dir), flags);
        fftw_free(buf);
        if (p == nullptr) throw NumericalError("fftw: plan creation failed");
        plans_.emplace(key, p);
        return p;
    }

    FftPlanCache(const FftPlanCache&) = delete;
    FftPlanCache& operator=(const FftPlanCache&) = delete;

private:
    FftPlanCache() = default;
    ~FftPlanCache() {
        for (auto& [k, p] : plans_) fftw_destroy_plan(p);
    }
    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

}  // namespace detail

/// Unnormalized in-place DFT: forward uses exp(-i...), backward exp(+i...).
inline void fft_inplace(FftShape shape, std::span<std::complex<double>> data, FftDirection dir) {
    if (data.size() != shape.size()) throw PreconditionError("fft: buffer size does not match shape");
    fftw_plan p = detail::FftPlanCache::instance().get(shape, dir);
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(p, ptr, ptr);
}

}  // namespace speckle
