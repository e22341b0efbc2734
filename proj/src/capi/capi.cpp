extern "C" int sre_placeholder_unused(void);
extern "C" int sre_placeholder_unused(void) { return 0; }
