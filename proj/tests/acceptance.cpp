// placeholder; filled by the acceptance suite
int main() { return 0; }
