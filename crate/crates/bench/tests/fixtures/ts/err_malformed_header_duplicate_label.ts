@problemName dup
@classLabel true a b a
@data
1,2:a
