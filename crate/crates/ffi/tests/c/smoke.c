#include <math.h>
#include <stdio.h>
#include <string.h>
#include "polybesov.h"

#define CHECK(call)                                                    \
    do {                                                               \
        PbStatus s_ = (call);                                          \
        if (s_ != PB_STATUS_OK) {                                      \
            char msg[512];                                             \
            size_t need = 0;                                           \
            pb_last_error_message(msg, sizeof msg, &need);             \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, msg);    \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(void) {
    if (strcmp(pb_schema_version(), "1.0.0") != 0) return 2;

    PbSurface *cube = NULL;
    CHECK(pb_surface_load("cube", &cube));
    size_t patches = 0;
    CHECK(pb_surface_num_patches(cube, &patches));

    PbField *field = NULL;
    CHECK(pb_field_analyze_model(cube, "vertex:0,0.6", "haar", 4, &field));
    double norm = 0.0;
    CHECK(pb_besov_norm(cube, field, 0.5, 2.0, 2.0, &norm));
    size_t ns[3] = {1, 10, 100};
    double errs[3];
    CHECK(pb_nterm_errors(field, 0.0, 2.0, ns, 3, errs));

    PbBemSystem *sys = NULL;
    CHECK(pb_bem_assemble(cube, 2, &sys));
    size_t n = 0;
    CHECK(pb_bem_len(sys, &n));
    double g[96], u[96], res = 1.0;
    if (n != 96) return 3;
    for (size_t i = 0; i < n; i++) g[i] = 1.0;
    CHECK(pb_bem_solve(sys, g, n, u, &res));

    /* error path: inadmissible parameters */
    double bad = 0.0;
    if (pb_besov_norm(cube, field, 0.0, 1.0, 1.0, &bad) != PB_STATUS_NOT_ADMISSIBLE) return 4;

    printf("patches %zu norm %.6f err %.3e %.3e %.3e density %.4f residual %.1e\n",
           patches, norm, errs[0], errs[1], errs[2], u[0], res);
    pb_bem_free(sys);
    pb_field_free(field);
    pb_surface_free(cube);
    return fabs(u[0] - 1.0) < 0.02 ? 0 : 5;
}
