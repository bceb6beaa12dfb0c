#include "efraft/parallel.hpp"

#include <cstdlib>
#include <thread>
#include <vector>

namespace efraft {

int thread_cap() {
    static const int cap = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        const char* env = std::getenv("EFRAFT_THREADS");
        if (env == nullptr || *env == '\0') return hw;
        long v = std::strtol(env, nullptr, 10);
        if (v <= 0) return hw;  // 0 = auto
        return static_cast<int>(v < hw ? v : hw);
    }();
    return cap;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t min_per_worker = 8;
    int workers = thread_cap();
    if (workers > 1 && n / min_per_worker < static_cast<std::size_t>(workers)) {
        workers = static_cast<int>(n / min_per_worker);
    }
    if (workers <= 1 || n == 0) {
        fn(0, n);
        return;
    }
    const std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) {
        std::size_t b = chunk * static_cast<std::size_t>(w);
        std::size_t e = b + chunk < n ? b + chunk : n;
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, chunk < n ? chunk : n);
    for (auto& t : pool) t.join();
}

}  // namespace efraft
