#include <math.h>
#include <stdio.h>
#include "panel_selinf.h"

int main(void) {
    PsPanel *panel = NULL;
    if (ps_panel_simulate(1, 60, 15, 2.0, 11, &panel) != PS_OK) return 10;
    PsRun *run = NULL;
    if (ps_fit(panel, 3, 4, PS_LS, 0, &run) != PS_OK) return 11;
    PsTest *test = NULL;
    if (ps_test(run, 1, 2, 0, &test) != PS_OK) return 12;
    PsTestSummary s;
    if (ps_test_summary(test, &s) != PS_OK) return 13;
    if (!(s.p_selective >= 0.0 && s.p_selective <= 1.0) || s.n_intervals == 0) return 14;
    if (ps_test(run, 1, 1, 0, &test) != PS_INPUT_ERROR || ps_last_error() == NULL) return 15;
    char *json = ps_test_json(test);
    if (json == NULL) return 16;
    printf("%s\n", json);
    ps_string_free(json);
    ps_test_free(test);
    ps_run_free(run);
    ps_panel_free(panel);
    return 0;
}
