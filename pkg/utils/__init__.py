# Пакет для утилит (логирование, конфигурация, ввод-вывод набора данных)
