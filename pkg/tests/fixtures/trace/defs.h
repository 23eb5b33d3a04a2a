#define VERSION1 0
#define VERSION2 1
#define VERSION3 2
#define VERSION4 3
#define HAS_FAILED 9999
#define WAKEUP 10
