#include <stdio.h>
#include <string.h>

#include "honion.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(int argc, char **argv) {
    uint64_t m = 0;
    CHECK(honion_required_honions(3000, 0.95, &m) == HONION_STATUS_OK);
    CHECK(m == 1497);
    CHECK(honion_required_honions(2, 0.95, &m) == HONION_STATUS_INVALID_ARGUMENT);
    CHECK(honion_last_error() != NULL);

    uint8_t id[10] = {0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef, 0x01, 0x23};
    uint8_t desc[20];
    CHECK(honion_descriptor_id(id, 17000, NULL, 0, desc) == HONION_STATUS_OK);
    CHECK(desc[0] == 0xcf && desc[1] == 0xf0 && desc[19] == 0xd8);
    char onion[17];
    CHECK(honion_onion_address(id, onion) == HONION_STATUS_OK);
    CHECK(strcmp(onion, "aerukz4jvpg66ajd") == 0);
    CHECK(honion_time_period(86000, 255) == 1);

    if (argc > 1) {
        HonionGraph *g = NULL;
        CHECK(honion_graph_from_run_dir(argv[1], &g) == HONION_STATUS_OK);
        CHECK(honion_graph_instance_count(g) > 0);
        HonionDetection *d = NULL;
        CHECK(honion_detect(g, HONION_METHOD_EXACT, 0, &d) == HONION_STATUS_OK);
        CHECK(honion_detection_size(d) >= 1);
        char fp[41];
        CHECK(honion_detection_fingerprint(d, 0, fp) == HONION_STATUS_OK);
        CHECK(strlen(fp) == 40);
        CHECK(honion_detection_fingerprint(d, 1000, fp) == HONION_STATUS_OUT_OF_RANGE);
        char *json = NULL;
        CHECK(honion_detection_to_json(d, &json) == HONION_STATUS_OK);
        printf("%s\n", json);
        honion_string_free(json);
        honion_detection_free(d);
        honion_graph_free(g);
    }
    return 0;
}
