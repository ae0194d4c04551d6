// Prints which tokens each window attends to on a small two-view grid with prompts.

#include <iostream>

#include "mvpt/attention.hpp"

int main() {
    using namespace mvpt;
    SequenceLayout lay;
    lay.prompt_rows = {0, 1};
    lay.views.push_back({TokenTag::mlo_patch, 2, 4, 4});
    lay.prompt_rows.insert(lay.prompt_rows.end(), {18, 19});
    lay.views.push_back({TokenTag::cc_patch, 20, 4, 4});
    lay.total = 36;

    for (std::size_t shift : {0, 1}) {
        const auto plan = build_window_plan(lay, 2, shift, true);
        std::cout << "shift " << shift << ": " << plan.groups.size() << " groups\n";
        for (std::size_t g = 0; g < plan.groups.size() && g < 6; ++g) {
            const auto& grp = plan.groups[g];
            std::cout << "  queries";
            for (auto q : grp.q) std::cout << ' ' << q;
            std::cout << " | " << grp.k.size() << " keys";
            if (!grp.allowed.empty()) {
                std::size_t masked = 0;
                for (auto a : grp.allowed) masked += !a;
                std::cout << ", " << masked << " masked pairs";
            }
            std::cout << '\n';
        }
    }
}
