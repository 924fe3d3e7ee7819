#include <stdio.h>
#include <stdlib.h>

#include "proxy_debias.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        PdStatus s_ = (call);                                                \
        if (s_ != PD_STATUS_OK) {                                            \
            const char *m_ = pd_last_error_message();                        \
            fprintf(stderr, "%s: status %d: %s\n", #call, (int)s_,           \
                    m_ ? m_ : "(none)");                                     \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    double rho[1] = {0.9};
    PdDataset *train = NULL;
    PdDataset *test = NULL;
    PdModel *model = NULL;
    PdModel *loaded = NULL;
    PdMetrics metrics;
    size_t hidden[2] = {8, 6};

    CHECK(pd_dataset_generate_reference(rho, 1, 7, false, &train));
    CHECK(pd_dataset_generate_reference(rho, 1, 7, true, &test));

    PdTrainParams params = pd_train_params_default(PD_MODE_ACTIVE_PD, 7);
    params.epochs = 2;
    params.proxy_dim = 4;
    params.hidden = hidden;
    params.hidden_len = 2;
    CHECK(pd_model_train(train, &params, &model));
    CHECK(pd_model_save(model, "model.json"));
    CHECK(pd_model_load("model.json", &loaded));
    CHECK(pd_model_evaluate(loaded, test, &metrics));

    if (pd_dataset_load_csv("missing.csv", &train) != PD_STATUS_IO) {
        fprintf(stderr, "expected an io error\n");
        return 1;
    }
    printf("version %s accuracy %.4f equalodds %.4f counter_p %.4f\n", pd_version(), metrics.accuracy,
           metrics.equalodds[0], metrics.counter_p[0]);

    pd_model_free(loaded);
    pd_model_free(model);
    pd_dataset_free(test);
    pd_dataset_free(train);
    return 0;
}
