// A few prompt-tuning steps on in-memory synthetic pairs; prints the four loss terms.

#include <iomanip>
#include <iostream>

#include "mvpt/pipeline.hpp"

int main() {
    using namespace mvpt;
    RunConfig c;
    c.tune_epochs = 3;
    c.tune_warmup_epochs = 0;

    std::vector<PairSample> train;
    for (auto& [lat, v] : synth_subjects(30, LabelScheme::ternary, 1, c.backbone.image_height))
        train.push_back({lat.subject_id, orient_normalize(v.first), orient_normalize(v.second), lat.label});

    const auto stage1 = init_backbone<float>(c.backbone, 2);
    const auto res = tune(c, stage1, train, &std::cout, 12);

    const auto& t = res.trainable;
    std::cout << std::setprecision(4) << "learnable " << t["learnable_elements"] << " of " << t["total_elements"]
              << " (fraction " << t["fraction"].get<double>() << ")\n"
              << "backbone unchanged: " << std::boolalpha << t["backbone_unchanged"].get<bool>() << '\n';

    const auto ad = adapter_from_state(res.state, c.backbone);
    NoGradGuard ng;
    const auto b = loss_overall(train[0].mlo, train[0].cc, train[0].label, c.backbone, res.state, ad, c.loss_weights());
    std::cout << "pair " << train[0].subject_id << ": L_mv " << b.l_mv.item() << ", L_mlo " << b.l_mlo.item()
              << ", L_cc " << b.l_cc.item() << ", L_md " << b.l_md.item() << ", total " << b.l_overall.item() << '\n';
}
